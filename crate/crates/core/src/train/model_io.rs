//! Binary model files.
//!
//! Layout, all integers `u64` and floats `f64`, little-endian:
//! the 8-byte magic, a format version, the schema block (K, F, the F vocab
//! sizes, embed dim, shared widths and tower widths, each list prefixed by
//! its length), the number of completed epochs, then every parameter tensor
//! in declaration order as `rows, cols, values...`.

use std::io::{Read, Write};
use std::path::Path;

use crate::backbone::{ModelParams, ModelShape};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HC2MODEL";
pub const VERSION: u64 = 1;

/// Parameters plus the training progress they reflect.
#[derive(Clone, Debug, PartialEq)]
pub struct SavedModel {
    pub params: ModelParams,
    pub epochs_trained: usize,
}

fn put(out: &mut impl Write, v: u64) -> Result<()> {
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_list(out: &mut impl Write, vs: &[usize]) -> Result<()> {
    put(out, vs.len() as u64)?;
    for &v in vs {
        put(out, v as u64)?;
    }
    Ok(())
}

pub fn write_model<W: Write>(mut out: W, model: &SavedModel) -> Result<()> {
    let shape = &model.params.shape;
    out.write_all(MAGIC)?;
    put(&mut out, VERSION)?;
    put(&mut out, shape.scenarios as u64)?;
    put_list(&mut out, &shape.vocab_sizes)?;
    put(&mut out, shape.embed_dim as u64)?;
    put_list(&mut out, &shape.shared_widths)?;
    put_list(&mut out, &shape.tower_widths)?;
    put(&mut out, model.epochs_trained as u64)?;
    let tensors = model.params.tensors();
    put(&mut out, tensors.len() as u64)?;
    for t in tensors {
        put(&mut out, t.rows() as u64)?;
        put(&mut out, t.cols() as u64)?;
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes8(&mut self, what: &str) -> Result<[u8; 8]> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::data(format!("model file truncated while reading {what}"))
            } else {
                Error::Io(e)
            }
        })?;
        Ok(b)
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let v = u64::from_le_bytes(self.bytes8(what)?);
        usize::try_from(v)
            .ok()
            .filter(|&v| v < 1 << 32)
            .ok_or_else(|| Error::data(format!("implausible {what} {v} in model file")))
    }

    fn list(&mut self, what: &str) -> Result<Vec<usize>> {
        let n = self.count(what)?;
        (0..n).map(|_| self.count(what)).collect()
    }
}

pub fn read_model<R: Read>(input: R) -> Result<SavedModel> {
    let mut r = Reader { inner: input };
    if &r.bytes8("magic")? != MAGIC {
        return Err(Error::data("not a model file (bad magic)"));
    }
    let version = u64::from_le_bytes(r.bytes8("version")?);
    if version != VERSION {
        return Err(Error::data(format!(
            "unsupported model file version {version}"
        )));
    }
    let shape = ModelShape {
        scenarios: r.count("scenario count")?,
        vocab_sizes: r.list("vocab size")?,
        embed_dim: r.count("embedding dim")?,
        shared_widths: r.list("shared width")?,
        tower_widths: r.list("tower width")?,
    };
    let epochs_trained = r.count("epoch count")?;
    let mut params = ModelParams::zeros(shape)?;
    let names = params.tensor_names();
    let n = r.count("tensor count")?;
    if n != names.len() {
        return Err(Error::data(format!(
            "model file holds {n} tensors, its schema needs {}",
            names.len()
        )));
    }
    for (t, name) in params.tensors_mut().into_iter().zip(&names) {
        let rows = r.count("tensor rows")?;
        let cols = r.count("tensor cols")?;
        if (rows, cols) != t.shape() {
            return Err(Error::data(format!(
                "{name} is {rows}x{cols} in the model file, expected {}x{}",
                t.rows(),
                t.cols()
            )));
        }
        for v in t.data_mut() {
            *v = f64::from_le_bytes(r.bytes8(name)?);
        }
    }
    let mut rest = [0u8; 1];
    if r.inner.read(&mut rest)? != 0 {
        return Err(Error::data("trailing bytes after model parameters"));
    }
    Ok(SavedModel {
        params,
        epochs_trained,
    })
}

pub fn save_model(path: impl AsRef<Path>, model: &SavedModel) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_model(std::io::BufWriter::new(file), model)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SavedModel> {
    let file = std::fs::File::open(path)?;
    read_model(std::io::BufReader::new(file))
}
