//! Synthetic multi-scenario click data with a known mix of shared and
//! scenario-specific signal.
//!
//! Each field value carries a hidden shared weight and, per scenario, a
//! hidden scenario weight. The click logit of a scenario-`k` sample is
//! `a_shared * sum_f w_shared[f][x_f] + a_spec * sum_f w_k[f][x_f]`, the
//! label is a Bernoulli draw of its sigmoid, and a `noise` fraction of
//! labels is then flipped. Weights are `N(0, 1/F)` so each sum has unit
//! variance.

use rand::seq::index;

use super::{Dataset, Schema};
use crate::backbone::Sample;
use crate::error::{Error, Result};
use crate::math::stable_sigmoid;
use crate::rng::RngStream;

/// Fraction of each scenario held out for testing.
pub const TEST_FRACTION: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub vocab_sizes: Vec<usize>,
    pub a_shared: f64,
    pub a_spec: f64,
    /// Samples per scenario; its length is the scenario count.
    pub counts: Vec<usize>,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            vocab_sizes: vec![20; 8],
            a_shared: 3.0,
            a_spec: 2.0,
            counts: vec![4000, 4000, 400],
            noise: 0.0,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn scenarios(&self) -> usize {
        self.counts.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts.is_empty() {
            return Err(Error::config("synthetic data needs at least one scenario"));
        }
        if self.vocab_sizes.is_empty() || self.vocab_sizes.contains(&0) {
            return Err(Error::config(
                "every field needs a positive vocabulary size",
            ));
        }
        if !(self.a_shared >= 0.0 && self.a_spec >= 0.0) {
            return Err(Error::config("signal strengths must be non-negative"));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return Err(Error::config(format!(
                "label noise {} outside [0, 0.5)",
                self.noise
            )));
        }
        Ok(())
    }
}

/// The hidden per-value weights behind a synthetic dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenWeights {
    pub shared: Vec<Vec<f64>>,
    pub specific: Vec<Vec<Vec<f64>>>,
}

fn draw_table(vocab_sizes: &[usize], rng: &mut RngStream) -> Vec<Vec<f64>> {
    let scale = 1.0 / (vocab_sizes.len() as f64).sqrt();
    vocab_sizes
        .iter()
        .map(|&v| (0..v).map(|_| scale * rng.normal()).collect())
        .collect()
}

fn table_sum(table: &[Vec<f64>], features: &[u32]) -> f64 {
    table
        .iter()
        .zip(features)
        .map(|(w, &x)| w[x as usize])
        .sum()
}

impl HiddenWeights {
    /// Scenario `k`'s weights come from their own stream, so they do not
    /// depend on how many scenarios exist.
    pub fn draw(cfg: &SynthConfig) -> Self {
        let root = RngStream::new(cfg.seed, "synth");
        let shared = draw_table(&cfg.vocab_sizes, &mut root.substream("shared"));
        let specific = (0..cfg.scenarios())
            .map(|k| draw_table(&cfg.vocab_sizes, &mut root.substream(&format!("spec-{k}"))))
            .collect();
        Self { shared, specific }
    }

    pub fn logit(&self, cfg: &SynthConfig, scenario: usize, features: &[u32]) -> f64 {
        cfg.a_shared * table_sum(&self.shared, features)
            + cfg.a_spec * table_sum(&self.specific[scenario], features)
    }

    /// Probability of a positive label after noise flipping.
    pub fn click_probability(&self, cfg: &SynthConfig, scenario: usize, features: &[u32]) -> f64 {
        let p = stable_sigmoid(self.logit(cfg, scenario, features));
        (1.0 - cfg.noise) * p + cfg.noise * (1.0 - p)
    }
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    generate_with(cfg, &HiddenWeights::draw(cfg))
}

/// Generates samples from explicit hidden weights. Scenario `k` draws its
/// features, labels and split from streams of its own.
pub fn generate_with(cfg: &SynthConfig, weights: &HiddenWeights) -> Result<Dataset> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed, "synth");
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (k, &n) in cfg.counts.iter().enumerate() {
        let mut rng = root.substream(&format!("samples-{k}"));
        let samples: Vec<Sample> = (0..n)
            .map(|_| {
                let features: Vec<u32> = cfg
                    .vocab_sizes
                    .iter()
                    .map(|&v| rng.below(v) as u32)
                    .collect();
                let p = stable_sigmoid(weights.logit(cfg, k, &features));
                let mut label = rng.bernoulli(p);
                if rng.bernoulli(cfg.noise) {
                    label = !label;
                }
                Sample::new(k, u8::from(label), features)
            })
            .collect();
        let n_test = (n as f64 * TEST_FRACTION).round() as usize;
        let mut is_test = vec![false; n];
        let mut split = root.substream(&format!("split-{k}"));
        for i in index::sample(&mut split, n, n_test) {
            is_test[i] = true;
        }
        for (s, t) in samples.into_iter().zip(is_test) {
            if t {
                test.push(s);
            } else {
                train.push(s);
            }
        }
    }
    let schema = Schema {
        scenarios: cfg.scenarios(),
        vocab_sizes: cfg.vocab_sizes.clone(),
    };
    Ok(Dataset {
        schema,
        train,
        test,
    })
}
