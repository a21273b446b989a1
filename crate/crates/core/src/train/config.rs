//! Training hyperparameters and their flat `key = value` form.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::backbone::ModelShape;
use crate::data::Schema;
use crate::error::{Error, Result};

/// Independently switchable parts of the objective. All on by default.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Components {
    /// Generalized contrastive term over shared representations.
    pub g_loss: bool,
    /// Diffusion-noised extra negatives for the generalized term.
    pub noise: bool,
    /// Reciprocal similarity weights; unit weights when off.
    pub weight: bool,
    /// Individual contrastive term over tower outputs.
    pub s_loss: bool,
    /// Narrow generalized candidates to the anchor's k-means cluster.
    pub fine: bool,
}

impl Default for Components {
    fn default() -> Self {
        Self {
            g_loss: true,
            noise: true,
            weight: true,
            s_loss: true,
            fine: true,
        }
    }
}

/// Names accepted by `ablate`, in display order.
pub const ABLATIONS: [&str; 5] = ["g-loss", "noise", "weight", "s-loss", "fine"];

impl Components {
    /// Clears the flag called `name` (one of [`ABLATIONS`]).
    pub fn ablate(&mut self, name: &str) -> Result<()> {
        let flag = match name.trim() {
            "g-loss" => &mut self.g_loss,
            "noise" => &mut self.noise,
            "weight" => &mut self.weight,
            "s-loss" => &mut self.s_loss,
            "fine" => &mut self.fine,
            other => {
                return Err(Error::config(format!(
                    "unknown ablation `{other}` (expected one of {})",
                    ABLATIONS.join(", ")
                )))
            }
        };
        *flag = false;
        Ok(())
    }

    /// Names of the cleared flags.
    pub fn ablated(&self) -> Vec<&'static str> {
        let on = [self.g_loss, self.noise, self.weight, self.s_loss, self.fine];
        ABLATIONS
            .iter()
            .zip(on)
            .filter(|(_, on)| !on)
            .map(|(n, _)| *n)
            .collect()
    }
}

/// Names a config and adjusts it for one variant.
pub type Variant = (&'static str, fn(&mut TrainConfig));

/// Runs of an ablation sweep: the full objective, each single-component
/// ablation, and the backbone alone.
pub const SWEEP: [Variant; 6] = [
    ("full", |_| {}),
    ("no-g-loss", |c| c.components.g_loss = false),
    ("no-noise", |c| c.components.noise = false),
    ("no-weight", |c| c.components.weight = false),
    ("no-s-loss", |c| c.components.s_loss = false),
    ("baseline", |c| {
        c.lambda1 = 0.0;
        c.lambda2 = 0.0;
    }),
];

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub tau: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Label-aware negatives per anchor, and per kind for the individual term.
    pub negatives: usize,
    /// Memory bank capacity; 0 disables the bank.
    pub bank: usize,
    pub clusters: usize,
    /// Optimizer steps between k-means refits.
    pub refresh: usize,
    pub kmeans_iters: usize,
    pub diff_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub dropout: f64,
    pub components: Components,
    /// Use `-ln p` for the contrastive terms instead of `-p`.
    pub log_form: bool,
    pub seed: u64,
    pub embed_dim: usize,
    pub shared_widths: Vec<usize>,
    pub tower_widths: Vec<usize>,
    /// Test samples used for the uniformity diagnostic.
    pub uniformity_limit: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            lambda1: 0.1,
            lambda2: 0.1,
            lr: 0.001,
            batch: 256,
            epochs: 5,
            negatives: 8,
            bank: 2048,
            clusters: 8,
            refresh: 200,
            kmeans_iters: 10,
            diff_steps: 50,
            beta_start: 1e-4,
            beta_end: 0.02,
            dropout: 0.1,
            components: Components::default(),
            log_form: true,
            seed: 42,
            embed_dim: 8,
            shared_widths: vec![64, 64],
            tower_widths: vec![32, 32],
            uniformity_limit: 1000,
        }
    }
}

/// Every key understood by [`TrainConfig::set`], in serialization order.
pub const KEYS: [&str; 22] = [
    "tau",
    "lambda1",
    "lambda2",
    "lr",
    "batch",
    "epochs",
    "negatives",
    "bank",
    "clusters",
    "refresh",
    "kmeans-iters",
    "diff-steps",
    "beta-start",
    "beta-end",
    "dropout",
    "ablate",
    "log-form",
    "seed",
    "embed-dim",
    "shared-widths",
    "tower-widths",
    "uniformity-limit",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_widths(key: &str, value: &str) -> Result<Vec<usize>> {
    let value = value.trim();
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|w| parse(key, w)).collect()
}

fn join(widths: &[usize]) -> String {
    widths
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl TrainConfig {
    /// Sets one field from its textual form. `ablate` takes a
    /// comma-separated list of flags to clear (empty for none) and replaces
    /// any earlier setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "tau" => self.tau = parse(key, value)?,
            "lambda1" => self.lambda1 = parse(key, value)?,
            "lambda2" => self.lambda2 = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "negatives" => self.negatives = parse(key, value)?,
            "bank" => self.bank = parse(key, value)?,
            "clusters" => self.clusters = parse(key, value)?,
            "refresh" => self.refresh = parse(key, value)?,
            "kmeans-iters" => self.kmeans_iters = parse(key, value)?,
            "diff-steps" => self.diff_steps = parse(key, value)?,
            "beta-start" => self.beta_start = parse(key, value)?,
            "beta-end" => self.beta_end = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "ablate" => {
                let mut c = Components::default();
                for name in value.split(',').filter(|n| !n.trim().is_empty()) {
                    c.ablate(name)?;
                }
                self.components = c;
            }
            "log-form" => self.log_form = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "embed-dim" => self.embed_dim = parse(key, value)?,
            "shared-widths" => self.shared_widths = parse_widths(key, value)?,
            "tower-widths" => self.tower_widths = parse_widths(key, value)?,
            "uniformity-limit" => self.uniformity_limit = parse(key, value)?,
            other => return Err(Error::config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "tau" => self.tau.to_string(),
            "lambda1" => self.lambda1.to_string(),
            "lambda2" => self.lambda2.to_string(),
            "lr" => self.lr.to_string(),
            "batch" => self.batch.to_string(),
            "epochs" => self.epochs.to_string(),
            "negatives" => self.negatives.to_string(),
            "bank" => self.bank.to_string(),
            "clusters" => self.clusters.to_string(),
            "refresh" => self.refresh.to_string(),
            "kmeans-iters" => self.kmeans_iters.to_string(),
            "diff-steps" => self.diff_steps.to_string(),
            "beta-start" => self.beta_start.to_string(),
            "beta-end" => self.beta_end.to_string(),
            "dropout" => self.dropout.to_string(),
            "ablate" => self.components.ablated().join(","),
            "log-form" => self.log_form.to_string(),
            "seed" => self.seed.to_string(),
            "embed-dim" => self.embed_dim.to_string(),
            "shared-widths" => join(&self.shared_widths),
            "tower-widths" => join(&self.tower_widths),
            "uniformity-limit" => self.uniformity_limit.to_string(),
            _ => return None,
        })
    }

    /// Parses `key = value` lines over the defaults. Blank lines and lines
    /// starting with `#` are ignored; unknown keys are errors.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (key, value) in parse_kv(text)? {
            cfg.set(&key, &value)?;
        }
        Ok(cfg)
    }

    /// Every field, one `key = value` line each. `f64` uses the shortest
    /// round-tripping decimal form, so parsing the output reproduces `self`.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).unwrap_or_default());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau", self.tau),
            ("lr", self.lr),
            ("beta-start", self.beta_start),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if !(self.beta_start <= self.beta_end && self.beta_end < 1.0) {
            return Err(Error::config(format!(
                "diffusion schedule needs beta-start <= beta-end < 1, got {} and {}",
                self.beta_start, self.beta_end
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        let counts = [
            ("batch", self.batch, 2),
            ("clusters", self.clusters, 1),
            ("refresh", self.refresh, 1),
            ("kmeans-iters", self.kmeans_iters, 1),
            ("diff-steps", self.diff_steps, 1),
            ("negatives", self.negatives, 1),
            ("embed-dim", self.embed_dim, 1),
        ];
        for (name, v, min) in counts {
            if v < min {
                return Err(Error::config(format!(
                    "{name} must be at least {min}, got {v}"
                )));
            }
        }
        if self.shared_widths.contains(&0) || self.tower_widths.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        Ok(())
    }

    /// Model layout for data with this schema.
    pub fn model_shape(&self, schema: &Schema) -> ModelShape {
        ModelShape {
            scenarios: schema.scenarios,
            vocab_sizes: schema.vocab_sizes.clone(),
            embed_dim: self.embed_dim,
            shared_widths: self.shared_widths.clone(),
            tower_widths: self.tower_widths.clone(),
        }
    }

    /// Whether the generalized term contributes at all.
    pub fn g_active(&self) -> bool {
        self.components.g_loss && self.lambda1 > 0.0
    }

    /// Whether the individual term contributes at all.
    pub fn s_active(&self) -> bool {
        self.components.s_loss && self.lambda2 > 0.0
    }
}

/// Splits `key = value` lines, keeping their order.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
