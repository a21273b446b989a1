//! InfoNCE over scenario-specific representations.
//!
//! The anchor is a sample's tower output `h`; its positive is a second pass
//! through the same tower with fresh dropout masks. Negatives come in two
//! kinds: towers outputs of samples from other scenarios, and within-scenario
//! samples pushed through a foreign scenario's tower (cross-scenario
//! encoding). No similarity weighting is applied here.

use super::{grouped_info_nce, ContrastiveLoss, Group, Repr};
use crate::backbone::{specific_forward, ParamVars};
use crate::error::{Error, Result};
use crate::math::{Graph, Var};
use crate::rng::RngStream;

#[derive(Clone, Debug)]
pub struct IndividualTriple {
    pub h: Repr,
    pub h_aug: Repr,
    pub neg_other: Vec<Repr>,
    pub neg_cross: Vec<Repr>,
}

/// Dropout-augmented view of `z` through tower `k`.
pub fn augment_positive(
    g: &mut Graph,
    k: usize,
    z: Var,
    params: &ParamVars,
    rate: f64,
    rng: &mut RngStream,
) -> Result<Var> {
    specific_forward(g, k, z, params, rate, rng)
}

/// Encodes a scenario-`anchor_k` negative with tower `k_prime` (dropout off).
pub fn cross_scenario_negative(
    g: &mut Graph,
    anchor_k: usize,
    k_prime: usize,
    z_neg: Var,
    params: &ParamVars,
) -> Result<Var> {
    if k_prime == anchor_k {
        return Err(Error::contract(format!(
            "cross-scenario encoding needs a foreign tower, got scenario {k_prime} twice"
        )));
    }
    let mut unused = RngStream::new(0, "unused");
    specific_forward(g, k_prime, z_neg, params, 0.0, &mut unused)
}

/// Mean individual contrastive loss over several anchors.
pub fn individual_loss_batch(
    g: &mut Graph,
    triples: &[IndividualTriple],
    tau: f64,
    log_form: bool,
) -> Result<ContrastiveLoss> {
    let mut groups = Vec::with_capacity(triples.len());
    for t in triples {
        if t.neg_other.is_empty() && t.neg_cross.is_empty() {
            return Err(Error::contract(
                "individual loss needs at least one negative",
            ));
        }
        let candidates = std::iter::once(&t.h_aug)
            .chain(&t.neg_other)
            .chain(&t.neg_cross)
            .map(|r| (r.clone(), 0.0))
            .collect();
        groups.push(Group {
            anchor: t.h.clone(),
            candidates,
        });
    }
    grouped_info_nce(g, &groups, tau, log_form)
}

pub fn individual_loss(
    g: &mut Graph,
    triple: &IndividualTriple,
    tau: f64,
    log_form: bool,
) -> Result<Var> {
    Ok(individual_loss_batch(g, std::slice::from_ref(triple), tau, log_form)?.loss)
}
