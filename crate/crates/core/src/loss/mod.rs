//! Contrastive objectives over shared and scenario-specific representations.

pub mod generalized;
pub mod individual;

use std::ops::Range;

use crate::error::{Error, Result};
use crate::math::{Graph, Matrix, Var};

pub use generalized::{
    generalized_loss, generalized_loss_batch, reciprocal_weight, AnchorSet, Role, WeightedPair,
};
pub use individual::{
    augment_positive, cross_scenario_negative, individual_loss, individual_loss_batch,
    IndividualTriple,
};

/// A representation taking part in a contrastive term: either a row of a
/// graph node (gradient flows into it) or a detached vector.
#[derive(Clone, Debug)]
pub enum Repr {
    Row(Var, usize),
    Detached(Vec<f64>),
}

impl Repr {
    /// The first row of `v`, for nodes holding a single vector.
    pub fn node(v: Var) -> Self {
        Repr::Row(v, 0)
    }
}

/// Batch loss plus the per-anchor values it averages.
#[derive(Clone, Debug)]
pub struct ContrastiveLoss {
    pub loss: Var,
    pub per_anchor: Vec<f64>,
}

/// One anchor with its candidates, positive first. Each candidate carries
/// the log of its multiplicative weight.
pub(crate) struct Group {
    pub anchor: Repr,
    pub candidates: Vec<(Repr, f64)>,
}

/// Stacked layout of every row referenced by a set of groups.
struct RowPool<'a> {
    sources: Vec<Var>,
    detached: Vec<&'a [f64]>,
    width: Option<usize>,
}

#[derive(Clone, Copy)]
enum Slot {
    Node(usize, usize),
    Detached(usize),
}

impl<'a> RowPool<'a> {
    fn slot(&mut self, r: &'a Repr, g: &Graph) -> Result<Slot> {
        let (slot, w) = match r {
            Repr::Row(v, row) => {
                let m = g.value(*v);
                if *row >= m.rows() {
                    return Err(Error::Index(format!("row {row} of a {:?} node", m.shape())));
                }
                let pos = match self.sources.iter().position(|s| s == v) {
                    Some(p) => p,
                    None => {
                        self.sources.push(*v);
                        self.sources.len() - 1
                    }
                };
                (Slot::Node(pos, *row), m.cols())
            }
            Repr::Detached(vec) => {
                self.detached.push(vec);
                (Slot::Detached(self.detached.len() - 1), vec.len())
            }
        };
        match self.width {
            Some(expected) if expected != w => Err(Error::Dimension {
                op: "contrastive logits",
                left: (1, expected),
                right: (1, w),
            }),
            _ => {
                self.width = Some(w);
                Ok(slot)
            }
        }
    }
}

/// Builds the mean over groups of `-ln softmax_pos` (or the literal
/// `-softmax_pos`) over dot-product logits scaled by `1/tau`.
pub(crate) fn grouped_info_nce(
    g: &mut Graph,
    groups: &[Group],
    tau: f64,
    log_form: bool,
) -> Result<ContrastiveLoss> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::config(format!("temperature {tau} must be positive")));
    }
    if groups.is_empty() {
        return Err(Error::contract("contrastive loss over no anchors"));
    }

    let mut pool = RowPool {
        sources: Vec::new(),
        detached: Vec::new(),
        width: None,
    };
    let mut anchor_slots = Vec::new();
    let mut cand_slots = Vec::new();
    let mut log_weights = Vec::new();
    let mut ranges: Vec<Range<usize>> = Vec::with_capacity(groups.len());
    for grp in groups {
        if grp.candidates.len() < 2 {
            return Err(Error::contract("an anchor needs a positive and a negative"));
        }
        let start = cand_slots.len();
        let anchor = pool.slot(&grp.anchor, g)?;
        for (c, lw) in &grp.candidates {
            if !lw.is_finite() {
                return Err(Error::contract(format!("non-finite log weight {lw}")));
            }
            cand_slots.push(pool.slot(c, g)?);
            anchor_slots.push(anchor);
            log_weights.push(*lw);
        }
        ranges.push(start..cand_slots.len());
    }

    // Node rows are gathered out of one stacked matrix; detached rows are
    // appended to it as a single constant block.
    let mut offsets = Vec::with_capacity(pool.sources.len());
    let mut total = 0;
    for s in &pool.sources {
        offsets.push(total);
        total += g.value(*s).rows();
    }
    let mut parts = pool.sources.clone();
    if !pool.detached.is_empty() {
        parts.push(g.constant(Matrix::from_rows(&pool.detached)));
    }
    let stacked = g.vstack(&parts)?;
    let to_row = |s: &Slot| match *s {
        Slot::Node(i, r) => offsets[i] + r,
        Slot::Detached(j) => total + j,
    };
    let anchor_rows = anchor_slots.iter().map(to_row).collect();
    let cand_rows = cand_slots.iter().map(to_row).collect();
    let anchors = g.gather_rows(stacked, anchor_rows)?;
    let cands = g.gather_rows(stacked, cand_rows)?;
    let dots = g.row_dots(anchors, cands)?;
    let logits = g.scale(dots, 1.0 / tau);
    let loss = g.info_nce(logits, ranges, &log_weights, log_form)?;
    let per_anchor = g.info_nce_terms(loss).expect("info_nce node");
    Ok(ContrastiveLoss { loss, per_anchor })
}
