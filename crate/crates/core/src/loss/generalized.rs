//! Weighted InfoNCE over shared representations.
//!
//! For an anchor `z` with positive `z+` and negatives `z-_i`, the term is
//!
//! ```text
//! P   = s+  * exp(z . z+  / tau)
//! N_i = s_i * exp(z . z-_i / tau)
//! loss = -ln(P / (P + sum_i N_i))      (log form, default)
//! loss = -P / (P + sum_i N_i)          (literal form)
//! ```
//!
//! where each weight `s = 1 / max(e . e', eps)` is the reciprocal similarity
//! of the two samples' feature embeddings, computed on detached values.

use super::{grouped_info_nce, ContrastiveLoss, Group, Repr};
use crate::error::{Error, Result};
use crate::math::{dot, Graph, Var};

/// Lower clamp on embedding dot products before taking the reciprocal.
pub const WEIGHT_EPS: f64 = 1e-2;

/// `1 / max(e_i . e_j, eps)`. Inputs are plain values, so the weight can
/// never carry gradient.
pub fn reciprocal_weight(e_i: &[f64], e_j: &[f64], eps: f64) -> f64 {
    debug_assert_eq!(e_i.len(), e_j.len());
    1.0 / dot(e_i, e_j).max(eps)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Positive,
    Negative,
}

#[derive(Clone, Debug)]
pub struct WeightedPair {
    pub weight: f64,
    pub repr: Repr,
    pub role: Role,
}

impl WeightedPair {
    pub fn positive(weight: f64, repr: Repr) -> Self {
        Self {
            weight,
            repr,
            role: Role::Positive,
        }
    }

    pub fn negative(weight: f64, repr: Repr) -> Self {
        Self {
            weight,
            repr,
            role: Role::Negative,
        }
    }
}

/// One anchor's positive and negatives.
#[derive(Clone, Debug)]
pub struct AnchorSet {
    pub anchor: Repr,
    pub positive: WeightedPair,
    pub negatives: Vec<WeightedPair>,
}

fn log_weight(p: &WeightedPair) -> Result<f64> {
    if !(p.weight > 0.0 && p.weight.is_finite()) {
        return Err(Error::contract(format!(
            "contrastive weight {} must be positive and finite",
            p.weight
        )));
    }
    Ok(p.weight.ln())
}

/// Mean weighted InfoNCE over several anchors.
pub fn generalized_loss_batch(
    g: &mut Graph,
    sets: &[AnchorSet],
    tau: f64,
    log_form: bool,
) -> Result<ContrastiveLoss> {
    let mut groups = Vec::with_capacity(sets.len());
    for set in sets {
        if set.positive.role != Role::Positive {
            return Err(Error::contract("first pair must have the positive role"));
        }
        if set.negatives.is_empty() {
            return Err(Error::contract(
                "generalized loss needs at least one negative",
            ));
        }
        let mut candidates = Vec::with_capacity(set.negatives.len() + 1);
        candidates.push((set.positive.repr.clone(), log_weight(&set.positive)?));
        for n in &set.negatives {
            if n.role != Role::Negative {
                return Err(Error::contract("negatives must have the negative role"));
            }
            candidates.push((n.repr.clone(), log_weight(n)?));
        }
        groups.push(Group {
            anchor: set.anchor.clone(),
            candidates,
        });
    }
    grouped_info_nce(g, &groups, tau, log_form)
}

/// Weighted InfoNCE for a single anchor vector.
pub fn generalized_loss(
    g: &mut Graph,
    anchor_z: Var,
    positive: &WeightedPair,
    negatives: &[WeightedPair],
    tau: f64,
    log_form: bool,
) -> Result<Var> {
    let set = AnchorSet {
        anchor: Repr::node(anchor_z),
        positive: positive.clone(),
        negatives: negatives.to_vec(),
    };
    Ok(generalized_loss_batch(g, &[set], tau, log_form)?.loss)
}
