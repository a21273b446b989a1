//! Forward (noising) diffusion used to synthesize extra negatives.

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Variance schedule `beta_1..beta_T` and cumulative products
/// `alpha_bar_t = prod_{i<=t} (1 - beta_i)`. Steps are 1-based.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    /// Betas linearly interpolated from `beta_start` to `beta_end`.
    pub fn linear(beta_start: f64, beta_end: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::config("diffusion needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::config(format!(
                "diffusion betas need 0 < start <= end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::config("diffusion needs at least one step"));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::config(format!("beta {b} outside (0, 1)")));
        }
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Index(format!(
                "diffusion step {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }
}

/// Closed-form sample at step `t` with the given standard-normal noise:
/// `sqrt(alpha_bar_t) * z + sqrt(1 - alpha_bar_t) * noise`.
pub fn diffuse_with_noise(
    z: &[f64],
    t: usize,
    schedule: &DiffusionSchedule,
    noise: &[f64],
) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    if noise.len() != z.len() {
        return Err(Error::Dimension {
            op: "diffuse",
            left: (1, z.len()),
            right: (1, noise.len()),
        });
    }
    let ab = schedule.alpha_bar(t);
    let (signal, spread) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(z.iter()
        .zip(noise)
        .map(|(x, m)| signal * x + spread * m)
        .collect())
}

/// Closed-form sample at step `t` with fresh noise from `rng`.
pub fn diffuse(
    z: &[f64],
    t: usize,
    schedule: &DiffusionSchedule,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    let noise: Vec<f64> = (0..z.len()).map(|_| rng.normal()).collect();
    diffuse_with_noise(z, t, schedule, &noise)
}

/// Step-by-step Markov chain `z_t ~ N(sqrt(1 - beta_t) z_{t-1}, beta_t I)`.
/// Distributionally equal to [`diffuse`]; kept as its reference.
pub fn diffuse_chain(
    z: &[f64],
    t: usize,
    schedule: &DiffusionSchedule,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    let mut x = z.to_vec();
    for step in 1..=t {
        let b = schedule.beta(step);
        let (keep, spread) = ((1.0 - b).sqrt(), b.sqrt());
        for v in &mut x {
            *v = keep * *v + spread * rng.normal();
        }
    }
    Ok(x)
}
