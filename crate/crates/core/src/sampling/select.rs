//! Label-aware choice of contrastive candidates.
//!
//! The candidate pool is the current batch followed by the memory bank.
//! For an anchor of scenario `k` and label `y`, positives are pool entries
//! from another scenario with label `y`, and negatives are entries from
//! another scenario with the opposite label. With fine-grained selection
//! both pools are first narrowed to the anchor's k-means cluster, falling
//! back to the full pool when the narrowed one is empty.

use rand::seq::index;

use super::bank::MemoryBank;
use super::diffusion::{diffuse, DiffusionSchedule};
use crate::error::Result;
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Provenance {
    InBatch,
    Bank,
    Diffused,
}

/// One candidate of the pool. `z` and `embed` are detached values.
#[derive(Clone, Copy, Debug)]
pub struct PoolItem<'a> {
    pub provenance: Provenance,
    /// Batch row or bank slot.
    pub index: usize,
    pub label: u8,
    pub scenario: usize,
    pub cluster: usize,
    pub z: &'a [f64],
    pub embed: &'a [f64],
}

/// Batch rows first (pool index == batch position), then bank slots.
#[derive(Clone, Debug, Default)]
pub struct CandidatePool<'a> {
    pub items: Vec<PoolItem<'a>>,
    pub batch_len: usize,
}

/// Per-row view of an embedded batch.
#[derive(Clone, Copy, Debug)]
pub struct BatchRow<'a> {
    pub label: u8,
    pub scenario: usize,
    pub cluster: usize,
    pub z: &'a [f64],
    pub embed: &'a [f64],
}

impl<'a> CandidatePool<'a> {
    pub fn new(batch: &[BatchRow<'a>], bank: &'a MemoryBank) -> Self {
        let mut items: Vec<PoolItem<'a>> = batch
            .iter()
            .enumerate()
            .map(|(i, r)| PoolItem {
                provenance: Provenance::InBatch,
                index: i,
                label: r.label,
                scenario: r.scenario,
                cluster: r.cluster,
                z: r.z,
                embed: r.embed,
            })
            .collect();
        items.extend(bank.slots().iter().enumerate().map(|(j, e)| PoolItem {
            provenance: Provenance::Bank,
            index: j,
            label: e.label,
            scenario: e.scenario,
            cluster: e.cluster,
            z: &e.z,
            embed: &e.embed,
        }));
        Self {
            items,
            batch_len: batch.len(),
        }
    }
}

/// Synthetic negative made by noising a selected negative's `z`. It keeps
/// the source's pool index, whose `embed` stands in for its own.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusedNegative {
    pub source: usize,
    pub step: usize,
    pub z: Vec<f64>,
}

/// Candidates chosen for one anchor. Indices point into the pool.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveSet {
    pub anchor: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
    pub diffused: Vec<DiffusedNegative>,
}

impl ContrastiveSet {
    /// Provenance of the positive, then of every negative (label-aware ones
    /// before diffused ones).
    pub fn provenance(&self, pool: &CandidatePool<'_>) -> Vec<Provenance> {
        std::iter::once(pool.items[self.positive].provenance)
            .chain(self.negatives.iter().map(|&i| pool.items[i].provenance))
            .chain(self.diffused.iter().map(|_| Provenance::Diffused))
            .collect()
    }
}

fn narrow(candidates: Vec<usize>, pool: &CandidatePool<'_>, cluster: usize) -> Vec<usize> {
    let same: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|&i| pool.items[i].cluster == cluster)
        .collect();
    if same.is_empty() {
        candidates
    } else {
        same
    }
}

/// Picks a positive uniformly and up to `negatives` negatives uniformly
/// without replacement. Returns `None` when the anchor has no valid
/// positive or no valid negative; the caller skips it.
pub fn select_contrastive(
    anchor: usize,
    pool: &CandidatePool<'_>,
    negatives: usize,
    fine: bool,
    rng: &mut RngStream,
) -> Option<ContrastiveSet> {
    let a = pool.items[anchor];
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (i, c) in pool.items.iter().enumerate() {
        if c.scenario == a.scenario {
            continue;
        }
        if c.label == a.label {
            pos.push(i);
        } else {
            neg.push(i);
        }
    }
    if fine {
        pos = narrow(pos, pool, a.cluster);
        neg = narrow(neg, pool, a.cluster);
    }
    if pos.is_empty() || neg.is_empty() || negatives == 0 {
        return None;
    }
    let positive = pos[rng.below(pos.len())];
    let count = negatives.min(neg.len());
    let negatives = index::sample(rng, neg.len(), count)
        .into_iter()
        .map(|j| neg[j])
        .collect();
    Some(ContrastiveSet {
        anchor,
        positive,
        negatives,
        diffused: Vec::new(),
    })
}

/// Adds `count` diffused copies of the set's negatives, cycling through
/// them in selection order, each at a step drawn uniformly from `1..=T`.
pub fn add_diffused_negatives(
    set: &mut ContrastiveSet,
    pool: &CandidatePool<'_>,
    count: usize,
    schedule: &DiffusionSchedule,
    rng: &mut RngStream,
) -> Result<()> {
    if set.negatives.is_empty() {
        return Ok(());
    }
    for i in 0..count {
        let source = set.negatives[i % set.negatives.len()];
        let step = 1 + rng.below(schedule.steps());
        let z = diffuse(pool.items[source].z, step, schedule, rng)?;
        set.diffused.push(DiffusedNegative { source, step, z });
    }
    Ok(())
}
