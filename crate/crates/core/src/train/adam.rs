//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::math::Matrix;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step: u64,
}

impl AdamState {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let (m, v) = shapes
            .into_iter()
            .map(|p| {
                (
                    Matrix::zeros(p.rows(), p.cols()),
                    Matrix::zeros(p.rows(), p.cols()),
                )
            })
            .unzip();
        Self { m, v, step: 0 }
    }

    /// Number of updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Applies one Adam update in place. Nothing is modified if any gradient
/// is non-finite; the error names the offending tensor.
pub fn adam_step(
    params: &mut [&mut Matrix],
    names: &[String],
    grads: &[Matrix],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::contract(format!(
            "{} parameters, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::Dimension {
                op: "adam_step",
                left: p.shape(),
                right: g.shape(),
            });
        }
        if !g.all_finite() {
            let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
            return Err(Error::numeric(format!("non-finite gradient for {name}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        let iter = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((w, &gr), (mi, vi)) in iter {
            *mi = BETA1 * *mi + (1.0 - BETA1) * gr;
            *vi = BETA2 * *vi + (1.0 - BETA2) * gr * gr;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(x: f64) -> Matrix {
        Matrix::scalar(x)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Matrix::row_vector(vec![1.0, -2.0]);
        let mut state = AdamState::new([&p]);
        adam_step(&mut [&mut p], &[], &[Matrix::zeros(1, 2)], &mut state, 0.1).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Matrix::row_vector(vec![0.0, 0.0, 0.0]);
        let mut state = AdamState::new([&p]);
        let g = Matrix::row_vector(vec![3.0, -0.02, 1e4]);
        adam_step(&mut [&mut p], &[], &[g], &mut state, 0.01).unwrap();
        for (w, s) in p.data().iter().zip([-1.0, 1.0, -1.0]) {
            assert!((w - 0.01 * s).abs() < 1e-8, "{w}");
        }
    }

    #[test]
    fn descends_a_parabola() {
        let mut x = one(1.0);
        let mut state = AdamState::new([&x]);
        let mut prev = x.item().abs();
        for _ in 0..10 {
            let g = one(2.0 * x.item());
            adam_step(&mut [&mut x], &[], &[g], &mut state, 0.1).unwrap();
            assert!(x.item().abs() < prev);
            prev = x.item().abs();
        }
    }

    #[test]
    fn nan_gradient_is_named() {
        let mut p = one(1.0);
        let mut state = AdamState::new([&p]);
        let err = adam_step(
            &mut [&mut p],
            &["tower[1].head.bias".to_string()],
            &[one(f64::NAN)],
            &mut state,
            0.1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert!(err.to_string().contains("tower[1].head.bias"));
        assert_eq!(p.item(), 1.0);
        assert_eq!(state.step(), 0);
    }
}
