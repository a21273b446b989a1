//! Shared-bottom ranking backbone.
//!
//! Samples flow through four stages: a per-field embedding lookup whose rows
//! are concatenated into `e`, a shared ReLU MLP producing `z`, one ReLU tower
//! per scenario producing `h`, and a per-scenario logistic head producing the
//! click probability. Every stage works on a batch matrix with one row per
//! sample; a single sample is a one-row batch.

use crate::error::{Error, Result};
use crate::math::{Graph, Matrix, Var};
use crate::rng::RngStream;

/// One labeled impression.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Sample {
    pub scenario: usize,
    pub label: u8,
    pub features: Vec<u32>,
}

impl Sample {
    pub fn new(scenario: usize, label: u8, features: Vec<u32>) -> Self {
        Self {
            scenario,
            label,
            features,
        }
    }

    pub fn target(&self) -> f64 {
        f64::from(self.label)
    }
}

/// Layer layout of a model. Equal shapes mean interchangeable parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelShape {
    pub scenarios: usize,
    pub vocab_sizes: Vec<usize>,
    pub embed_dim: usize,
    pub shared_widths: Vec<usize>,
    pub tower_widths: Vec<usize>,
}

impl ModelShape {
    pub fn fields(&self) -> usize {
        self.vocab_sizes.len()
    }

    /// Width of the concatenated embedding `e`.
    pub fn embed_width(&self) -> usize {
        self.fields() * self.embed_dim
    }

    /// Width of the shared representation `z`.
    pub fn repr_width(&self) -> usize {
        self.shared_widths
            .last()
            .copied()
            .unwrap_or_else(|| self.embed_width())
    }

    /// Width of the scenario representation `h`.
    pub fn tower_width(&self) -> usize {
        self.tower_widths
            .last()
            .copied()
            .unwrap_or_else(|| self.repr_width())
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios == 0 {
            return Err(Error::config("model needs at least one scenario"));
        }
        if self.vocab_sizes.is_empty() || self.vocab_sizes.contains(&0) {
            return Err(Error::config(
                "every feature field needs a non-empty vocabulary",
            ));
        }
        if self.embed_dim == 0 {
            return Err(Error::config("embedding dimension must be positive"));
        }
        if self.shared_widths.contains(&0) || self.tower_widths.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        Ok(())
    }

    /// Checks that a sample fits this model's scenarios and vocabularies.
    pub fn check_sample(&self, sample: &Sample) -> Result<()> {
        if sample.scenario >= self.scenarios {
            return Err(Error::data(format!(
                "scenario {} outside model with {} scenarios",
                sample.scenario, self.scenarios
            )));
        }
        if sample.features.len() != self.fields() {
            return Err(Error::data(format!(
                "sample has {} features, model expects {}",
                sample.features.len(),
                self.fields()
            )));
        }
        for (field, (&id, &vocab)) in sample.features.iter().zip(&self.vocab_sizes).enumerate() {
            if id as usize >= vocab {
                return Err(Error::data(format!(
                    "field {field}: id {id} out of vocabulary of size {vocab}"
                )));
            }
        }
        Ok(())
    }
}

/// Fully connected layer; `weight` is `in x out`, `bias` is `1 x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    fn xavier(fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Self {
        Self {
            weight: xavier_uniform(fan_in, fan_out, rng),
            bias: Matrix::zeros(1, fan_out),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tower {
    pub layers: Vec<Linear>,
    pub head: Linear,
}

/// All trainable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub shape: ModelShape,
    pub embeddings: Vec<Matrix>,
    pub shared: Vec<Linear>,
    pub towers: Vec<Tower>,
}

fn xavier_uniform(fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.uniform_range(-limit, limit))
        .collect();
    Matrix::new(fan_in, fan_out, data).expect("sized by construction")
}

impl ModelParams {
    /// Xavier-uniform weights, zero biases. Draw order follows declaration
    /// order, so a given stream always yields the same model.
    pub fn init(shape: ModelShape, rng: &mut RngStream) -> Result<Self> {
        shape.validate()?;
        let embeddings = shape
            .vocab_sizes
            .iter()
            .map(|&v| xavier_uniform(v, shape.embed_dim, rng))
            .collect();
        let mut width = shape.embed_width();
        let mut shared = Vec::with_capacity(shape.shared_widths.len());
        for &w in &shape.shared_widths {
            shared.push(Linear::xavier(width, w, rng));
            width = w;
        }
        let towers = (0..shape.scenarios)
            .map(|_| {
                let mut width = shape.repr_width();
                let mut layers = Vec::with_capacity(shape.tower_widths.len());
                for &w in &shape.tower_widths {
                    layers.push(Linear::xavier(width, w, rng));
                    width = w;
                }
                Tower {
                    layers,
                    head: Linear::xavier(width, 1, rng),
                }
            })
            .collect();
        Ok(Self {
            shape,
            embeddings,
            shared,
            towers,
        })
    }

    /// All-zero parameters with the layout of `shape`.
    pub fn zeros(shape: ModelShape) -> Result<Self> {
        let mut params = Self::init(shape, &mut RngStream::new(0, "zeros"))?;
        for t in params.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        Ok(params)
    }

    /// Parameters in declaration order: embedding tables, shared layers
    /// (weight, bias), then per tower its layers and head.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = self.embeddings.iter().collect();
        for l in &self.shared {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        for t in &self.towers {
            for l in t.layers.iter().chain(std::iter::once(&t.head)) {
                out.push(&l.weight);
                out.push(&l.bias);
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = self.embeddings.iter_mut().collect();
        for l in &mut self.shared {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        for t in &mut self.towers {
            for l in t.layers.iter_mut().chain(std::iter::once(&mut t.head)) {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        out
    }

    /// Human-readable names aligned with [`tensors`](Self::tensors).
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out: Vec<String> = (0..self.embeddings.len())
            .map(|f| format!("embedding[{f}]"))
            .collect();
        for i in 0..self.shared.len() {
            out.push(format!("shared[{i}].weight"));
            out.push(format!("shared[{i}].bias"));
        }
        for (k, t) in self.towers.iter().enumerate() {
            for i in 0..t.layers.len() {
                out.push(format!("tower[{k}].layer[{i}].weight"));
                out.push(format!("tower[{k}].layer[{i}].bias"));
            }
            out.push(format!("tower[{k}].head.weight"));
            out.push(format!("tower[{k}].head.bias"));
        }
        out
    }

    /// Loads every tensor into `g` as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> ParamVars {
        let embeddings = self.embeddings.iter().map(|m| g.param(m.clone())).collect();
        let mut bind_linear = |l: &Linear| LinearVars {
            weight: g.param(l.weight.clone()),
            bias: g.param(l.bias.clone()),
        };
        let shared = self.shared.iter().map(&mut bind_linear).collect();
        let towers = self
            .towers
            .iter()
            .map(|t| TowerVars {
                layers: t.layers.iter().map(&mut bind_linear).collect(),
                head: bind_linear(&t.head),
            })
            .collect();
        ParamVars {
            shape: self.shape.clone(),
            embeddings,
            shared,
            towers,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Clone, Debug)]
pub struct TowerVars {
    pub layers: Vec<LinearVars>,
    pub head: LinearVars,
}

/// Graph handles for a bound [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub shape: ModelShape,
    pub embeddings: Vec<Var>,
    pub shared: Vec<LinearVars>,
    pub towers: Vec<TowerVars>,
}

impl ParamVars {
    /// Handles in the same order as [`ModelParams::tensors`].
    pub fn all(&self) -> Vec<Var> {
        let mut out = self.embeddings.clone();
        for l in &self.shared {
            out.extend([l.weight, l.bias]);
        }
        for t in &self.towers {
            for l in t.layers.iter().chain(std::iter::once(&t.head)) {
                out.extend([l.weight, l.bias]);
            }
        }
        out
    }

    /// Inverse of [`ParamVars::all`]: regroups handles listed in
    /// declaration order.
    pub fn from_handles(shape: ModelShape, handles: &[Var]) -> Result<Self> {
        let per_tower = 2 * (shape.tower_widths.len() + 1);
        let expected = shape.fields() + 2 * shape.shared_widths.len() + shape.scenarios * per_tower;
        if handles.len() != expected {
            return Err(Error::contract(format!(
                "{} handles for a model with {expected} tensors",
                handles.len()
            )));
        }
        let mut it = handles.iter().copied();
        let mut next = || it.next().expect("counted above");
        let embeddings = (0..shape.fields()).map(|_| next()).collect();
        let mut linear = || LinearVars {
            weight: next(),
            bias: next(),
        };
        let shared = (0..shape.shared_widths.len()).map(|_| linear()).collect();
        let towers = (0..shape.scenarios)
            .map(|_| TowerVars {
                layers: (0..shape.tower_widths.len()).map(|_| linear()).collect(),
                head: linear(),
            })
            .collect();
        Ok(Self {
            shape,
            embeddings,
            shared,
            towers,
        })
    }

    /// Gradients after a backward pass, zero where a tensor was unused.
    pub fn gradients(&self, g: &Graph) -> Vec<Matrix> {
        self.all()
            .into_iter()
            .map(|v| {
                g.grad(v).cloned().unwrap_or_else(|| {
                    let (r, c) = g.value(v).shape();
                    Matrix::zeros(r, c)
                })
            })
            .collect()
    }

    fn tower(&self, k: usize) -> Result<&TowerVars> {
        self.towers.get(k).ok_or_else(|| {
            Error::Index(format!(
                "scenario {k} outside model with {} scenarios",
                self.towers.len()
            ))
        })
    }
}

fn dense_relu(g: &mut Graph, x: Var, layer: &LinearVars) -> Result<Var> {
    let y = g.matmul(x, layer.weight)?;
    let y = g.add_bias(y, layer.bias)?;
    Ok(g.relu(y))
}

/// Concatenated field embeddings, one row per sample.
pub fn embed(g: &mut Graph, samples: &[&Sample], params: &ParamVars) -> Result<Var> {
    for s in samples {
        params.shape.check_sample(s)?;
    }
    let mut parts = Vec::with_capacity(params.embeddings.len());
    for (field, &table) in params.embeddings.iter().enumerate() {
        let ids = samples.iter().map(|s| s.features[field] as usize).collect();
        parts.push(g.gather_rows(table, ids)?);
    }
    g.hstack(&parts)
}

/// The shared network `f`: `z = f(e)`.
pub fn shared_forward(g: &mut Graph, e: Var, params: &ParamVars) -> Result<Var> {
    let mut x = e;
    for layer in &params.shared {
        x = dense_relu(g, x, layer)?;
    }
    Ok(x)
}

/// Tower `g^(k)` applied to rows of `z`, with dropout after every layer's
/// activation. A rate of zero consumes nothing from `rng`.
pub fn specific_forward(
    g: &mut Graph,
    k: usize,
    z: Var,
    params: &ParamVars,
    dropout_rate: f64,
    rng: &mut RngStream,
) -> Result<Var> {
    let tower = params.tower(k)?;
    let mut x = z;
    for layer in &tower.layers {
        x = dense_relu(g, x, layer)?;
        x = g.dropout(x, dropout_rate, rng)?;
    }
    Ok(x)
}

/// Click probability from tower output, as a column.
pub fn predict(g: &mut Graph, h: Var, k: usize, params: &ParamVars) -> Result<Var> {
    let head = params.tower(k)?.head;
    let logit = g.matmul(h, head.weight)?;
    let logit = g.add_bias(logit, head.bias)?;
    Ok(g.sigmoid(logit))
}

/// Intermediate nodes of a routed batch forward pass, rows in batch order.
#[derive(Clone, Copy, Debug)]
pub struct BatchForward {
    pub e: Var,
    pub z: Var,
    pub h: Var,
    pub probs: Var,
}

/// Runs each sample through the shared network and its own scenario's tower.
pub fn forward_batch(
    g: &mut Graph,
    samples: &[&Sample],
    params: &ParamVars,
    dropout_rate: f64,
    rng: &mut RngStream,
) -> Result<BatchForward> {
    if samples.is_empty() {
        return Err(Error::contract("forward pass over an empty batch"));
    }
    let e = embed(g, samples, params)?;
    let z = shared_forward(g, e, params)?;
    let (h, probs) = route_towers(g, samples, z, params, dropout_rate, rng)?;
    Ok(BatchForward { e, z, h, probs })
}

/// Applies each row's own tower and head to the rows of `z`.
pub fn route_towers(
    g: &mut Graph,
    samples: &[&Sample],
    z: Var,
    params: &ParamVars,
    dropout_rate: f64,
    rng: &mut RngStream,
) -> Result<(Var, Var)> {
    let mut order = Vec::with_capacity(samples.len());
    let mut hs = Vec::new();
    let mut ps = Vec::new();
    for k in 0..params.towers.len() {
        let rows: Vec<usize> = (0..samples.len())
            .filter(|&i| samples[i].scenario == k)
            .collect();
        if rows.is_empty() {
            continue;
        }
        order.extend_from_slice(&rows);
        let zk = g.gather_rows(z, rows)?;
        let hk = specific_forward(g, k, zk, params, dropout_rate, rng)?;
        ps.push(predict(g, hk, k, params)?);
        hs.push(hk);
    }
    if order.len() != samples.len() {
        return Err(Error::Index("sample scenario outside the model".into()));
    }
    let mut inverse = vec![0; order.len()];
    for (pos, &i) in order.iter().enumerate() {
        inverse[i] = pos;
    }
    let h = g.vstack(&hs)?;
    let h = g.gather_rows(h, inverse.clone())?;
    let p = g.vstack(&ps)?;
    let p = g.gather_rows(p, inverse)?;
    Ok((h, p))
}

/// Mean cross-entropy of a probability column against the samples' labels.
pub fn cross_entropy(g: &mut Graph, probs: Var, samples: &[&Sample]) -> Result<Var> {
    let labels: Vec<f64> = samples.iter().map(|s| s.target()).collect();
    g.bce_mean(probs, &labels)
}

/// Mean cross-entropy of a batch, each sample routed through its own tower.
pub fn main_loss(g: &mut Graph, samples: &[&Sample], params: &ParamVars) -> Result<Var> {
    if samples.is_empty() {
        return Err(Error::contract("main loss over an empty batch"));
    }
    // dropout is off, so the stream is never drawn from
    let mut unused = RngStream::new(0, "unused");
    let fwd = forward_batch(g, samples, params, 0.0, &mut unused)?;
    cross_entropy(g, fwd.probs, samples)
}

/// Graph-free forward pass used for evaluation and snapshots.
#[derive(Clone, Debug)]
pub struct Inference {
    pub e: Matrix,
    pub z: Matrix,
    pub h: Matrix,
    pub probs: Vec<f64>,
}

pub fn infer(params: &ModelParams, samples: &[&Sample]) -> Result<Inference> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let mut unused = RngStream::new(0, "unused");
    let fwd = forward_batch(&mut g, samples, &vars, 0.0, &mut unused)?;
    Ok(Inference {
        e: g.value(fwd.e).clone(),
        z: g.value(fwd.z).clone(),
        h: g.value(fwd.h).clone(),
        probs: g.value(fwd.probs).data().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> ModelShape {
        ModelShape {
            scenarios: 2,
            vocab_sizes: vec![3, 5],
            embed_dim: 4,
            shared_widths: vec![6, 5],
            tower_widths: vec![3],
        }
    }

    #[test]
    fn tensor_views_line_up() {
        let mut rng = RngStream::new(1, "init");
        let mut p = ModelParams::init(shape(), &mut rng).unwrap();
        let names = p.tensor_names();
        let shapes: Vec<_> = p.tensors().iter().map(|m| m.shape()).collect();
        assert_eq!(names.len(), shapes.len());
        assert_eq!(p.tensors_mut().len(), shapes.len());
        assert_eq!(shapes[0], (3, 4));
        assert_eq!(shapes[2], (8, 6));
        let mut g = Graph::new();
        let vars = p.bind(&mut g);
        let bound: Vec<_> = vars.all().iter().map(|v| g.value(*v).shape()).collect();
        assert_eq!(bound, shapes);
    }

    #[test]
    fn out_of_vocabulary_names_field_and_id() {
        let mut rng = RngStream::new(1, "init");
        let p = ModelParams::init(shape(), &mut rng).unwrap();
        let mut g = Graph::new();
        let vars = p.bind(&mut g);
        let s = Sample::new(0, 1, vec![1, 9]);
        let err = embed(&mut g, &[&s], &vars).unwrap_err().to_string();
        assert!(err.contains("field 1") && err.contains("id 9"), "{err}");
    }

    #[test]
    fn invalid_scenario_is_an_index_error() {
        let mut rng = RngStream::new(1, "init");
        let p = ModelParams::init(shape(), &mut rng).unwrap();
        let mut g = Graph::new();
        let vars = p.bind(&mut g);
        let z = g.constant(Matrix::zeros(1, 5));
        let mut r = RngStream::new(0, "d");
        assert!(matches!(
            specific_forward(&mut g, 2, z, &vars, 0.0, &mut r),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut rng = RngStream::new(1, "init");
        let p = ModelParams::init(shape(), &mut rng).unwrap();
        let mut g = Graph::new();
        let vars = p.bind(&mut g);
        assert!(matches!(
            main_loss(&mut g, &[], &vars),
            Err(Error::Contract(_))
        ));
    }
}
