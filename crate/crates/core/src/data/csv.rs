//! `scenario,label,f0,f1,...` files: one sample per line, ASCII decimal
//! integers, no quoting.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Dataset, Schema, Table};
use crate::backbone::Sample;
use crate::error::{Error, Result};

pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";

fn header_fields(line: &str) -> Result<usize> {
    let cols: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
    if cols.len() < 3 || cols[0] != "scenario" || cols[1] != "label" {
        return Err(Error::data(
            "line 1: expected header `scenario,label,f0,...`",
        ));
    }
    for (i, c) in cols[2..].iter().enumerate() {
        if *c != format!("f{i}") {
            return Err(Error::data(format!(
                "line 1: expected column `f{i}`, found `{c}`"
            )));
        }
    }
    Ok(cols.len() - 2)
}

fn parse_int(tok: &str, line: usize, what: &str) -> Result<i64> {
    tok.parse::<i64>()
        .map_err(|_| Error::data(format!("line {line}: {what} `{tok}` is not an integer")))
}

fn parse_row(text: &str, line: usize, fields: usize) -> Result<Sample> {
    let cols: Vec<&str> = text.trim_end_matches('\r').split(',').collect();
    if cols.len() != fields + 2 {
        return Err(Error::data(format!(
            "line {line}: expected {} columns, found {}",
            fields + 2,
            cols.len()
        )));
    }
    let scenario = parse_int(cols[0], line, "scenario")?;
    if scenario < 0 {
        return Err(Error::data(format!(
            "line {line}: negative scenario {scenario}"
        )));
    }
    let label = parse_int(cols[1], line, "label")?;
    if label != 0 && label != 1 {
        return Err(Error::data(format!(
            "line {line}: label {label} is not 0 or 1"
        )));
    }
    let mut features = Vec::with_capacity(fields);
    for (i, tok) in cols[2..].iter().enumerate() {
        let id = parse_int(tok, line, &format!("f{i}"))?;
        if id < 0 || id > u32::MAX as i64 {
            return Err(Error::data(format!(
                "line {line}: f{i} id {id} out of range"
            )));
        }
        features.push(id as u32);
    }
    Ok(Sample::new(scenario as usize, label as u8, features))
}

/// Parses a whole CSV stream. Scenario count and vocabularies are inferred
/// as the largest observed value plus one.
pub fn parse_csv<R: Read>(reader: R) -> Result<Table> {
    let mut lines = BufReader::new(reader).lines();
    let header = match lines.next() {
        Some(l) => l?,
        None => return Err(Error::data("line 1: missing header")),
    };
    let fields = header_fields(&header)?;
    let mut samples = Vec::new();
    for (i, l) in lines.enumerate() {
        let l = l?;
        if l.is_empty() {
            continue;
        }
        samples.push(parse_row(&l, i + 2, fields)?);
    }
    if samples.is_empty() {
        log::warn!("dataset file has a header but no samples");
    }
    let schema = Schema::infer(fields, &samples);
    Ok(Table { schema, samples })
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Table> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    parse_csv(file).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_csv_to<W: Write>(out: W, fields: usize, samples: &[Sample]) -> Result<()> {
    let mut w = BufWriter::new(out);
    write!(w, "scenario,label")?;
    for i in 0..fields {
        write!(w, ",f{i}")?;
    }
    writeln!(w)?;
    for s in samples {
        write!(w, "{},{}", s.scenario, s.label)?;
        for id in &s.features {
            write!(w, ",{id}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(path: impl AsRef<Path>, fields: usize, samples: &[Sample]) -> Result<()> {
    let file = fs::File::create(path.as_ref())?;
    write_csv_to(file, fields, samples)
}

/// Reads `train.csv` and `test.csv` from a directory.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let train = load_csv(dir.join(TRAIN_FILE))?;
    let test = load_csv(dir.join(TEST_FILE))?;
    Dataset::from_tables(train, test)
}

pub fn write_dir(dir: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let fields = data.schema.fields();
    write_csv(dir.join(TRAIN_FILE), fields, &data.train)?;
    write_csv(dir.join(TEST_FILE), fields, &data.test)
}
