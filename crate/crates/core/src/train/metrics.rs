//! Ranking and representation metrics, and the metrics table format.

use std::io::Write;

use crate::error::Result;

/// Probability that a random positive outranks a random negative, ties
/// counting one half, via average ranks. `None` unless both classes occur.
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(
        scores.len(),
        labels.len(),
        "scores and labels differ in length"
    );
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of 1-based average ranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum += avg_rank * tied_pos as f64;
        i = j + 1;
    }
    let p = positives as f64;
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}

/// Log of the mean pairwise Gaussian potential `exp(-2 |u - v|^2)` over
/// length-normalized vectors; lower means more evenly spread. Zero-norm
/// vectors are dropped and counted. `None` with fewer than two usable
/// vectors.
pub fn uniformity<V: AsRef<[f64]>>(reprs: &[V]) -> (Option<f64>, usize) {
    let mut unit: Vec<Vec<f64>> = Vec::with_capacity(reprs.len());
    let mut skipped = 0;
    for r in reprs {
        let r = r.as_ref();
        let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            skipped += 1;
            continue;
        }
        unit.push(r.iter().map(|x| x / norm).collect());
    }
    if unit.len() < 2 {
        return (None, skipped);
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..unit.len() {
        for j in i + 1..unit.len() {
            let d2 = crate::math::squared_distance(&unit[i], &unit[j]);
            total += (-2.0 * d2).exp();
            pairs += 1;
        }
    }
    ((total / pairs as f64).ln().into(), skipped)
}

/// Scenario value of the all-scenario aggregate row.
pub const ALL_SCENARIOS: i64 = -1;

pub const METRICS_HEADER: &str = "epoch,scenario,auc,loss_main,loss_g,loss_s,skipped";

/// One (epoch, scenario) line of the metrics table.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub scenario: i64,
    /// Test AUC; absent when the scenario's test labels are single-class.
    pub auc: Option<f64>,
    /// Mean test cross-entropy.
    pub loss_main: f64,
    /// Mean generalized contrastive loss over the epoch's training anchors.
    pub loss_g: f64,
    /// Mean individual contrastive loss over the epoch's training anchors.
    pub loss_s: f64,
    /// Training anchors without a valid contrastive set.
    pub skipped: u64,
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        let auc = self
            .auc
            .map_or_else(|| "nan".to_string(), |a| format!("{a:.6}"));
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{}",
            self.epoch, self.scenario, auc, self.loss_main, self.loss_g, self.loss_s, self.skipped
        )
    }
}

/// Rows of the last epoch in a metrics table.
pub fn final_rows(rows: &[MetricsRow]) -> Vec<&MetricsRow> {
    let Some(last) = rows.last().map(|r| r.epoch) else {
        return Vec::new();
    };
    rows.iter().filter(|r| r.epoch == last).collect()
}

/// Mean over scenarios of the last epoch's AUCs, skipping undefined ones.
pub fn final_mean_auc(rows: &[MetricsRow]) -> Option<f64> {
    let aucs: Vec<f64> = final_rows(rows)
        .into_iter()
        .filter(|r| r.scenario != ALL_SCENARIOS)
        .filter_map(|r| r.auc)
        .collect();
    (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64)
}

pub fn write_metrics<W: Write>(mut out: W, rows: &[MetricsRow]) -> Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.to_csv_line())?;
    }
    Ok(())
}
