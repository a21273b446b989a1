//! The joint training loop and its evaluation pass.

use crate::backbone::{
    cross_entropy, forward_batch, infer, route_towers, specific_forward, BatchForward, ModelParams,
    ParamVars, Sample,
};
use crate::data::{batch_iter, Dataset};
use crate::error::{Error, Result};
use crate::loss::generalized::WEIGHT_EPS;
use crate::loss::{
    generalized_loss_batch, individual_loss_batch, reciprocal_weight, AnchorSet, ContrastiveLoss,
    IndividualTriple, Repr, WeightedPair,
};
use crate::math::{Graph, Matrix, Var};
use crate::rng::RngStream;
use crate::sampling::{
    add_diffused_negatives, assign_cluster, kmeans_fit, select_contrastive, BatchRow,
    CandidatePool, DiffusionSchedule, MemoryBank, MemoryBankEntry, Provenance,
};
use rand::seq::index;

use super::adam::{adam_step, AdamState};
use super::config::TrainConfig;
use super::metrics::{auc, uniformity, MetricsRow, ALL_SCENARIOS};

/// One random stream per stochastic phase, so switching a phase off never
/// shifts the draws of another.
#[derive(Clone, Debug)]
pub struct Streams {
    pub batch: RngStream,
    pub dropout: RngStream,
    pub sampling: RngStream,
    pub diffusion: RngStream,
    pub individual: RngStream,
    pub kmeans: RngStream,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self {
            batch: RngStream::new(seed, "batch"),
            dropout: RngStream::new(seed, "dropout"),
            sampling: RngStream::new(seed, "sampling"),
            diffusion: RngStream::new(seed, "diffusion"),
            individual: RngStream::new(seed, "individual"),
            kmeans: RngStream::new(seed, "kmeans"),
        }
    }
}

/// Stream the initial parameters are drawn from.
pub fn init_stream(seed: u64) -> RngStream {
    RngStream::new(seed, "init")
}

/// Everything besides the parameters that evolves during training.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub bank: MemoryBank,
    pub centroids: Option<Vec<Vec<f64>>>,
    pub schedule: DiffusionSchedule,
    pub streams: Streams,
    /// Optimizer steps taken so far.
    pub step: usize,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        Ok(Self {
            bank: MemoryBank::new(cfg.bank),
            centroids: None,
            schedule: DiffusionSchedule::linear(cfg.beta_start, cfg.beta_end, cfg.diff_steps)?,
            streams: Streams::new(cfg.seed),
            step: 0,
        })
    }
}

/// Graph nodes of one step's objective.
#[derive(Clone, Debug)]
pub struct StepLoss {
    pub total: Var,
    pub main: Var,
    pub forward: BatchForward,
    /// Generalized term and the batch positions of its anchors.
    pub g: Option<(ContrastiveLoss, Vec<usize>)>,
    /// Individual term and the batch positions of its anchors.
    pub s: Option<(ContrastiveLoss, Vec<usize>)>,
    /// Batch positions skipped by either term, once per term.
    pub skipped: Vec<usize>,
}

/// Scalar values of the objective's parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub main: f64,
    pub g: f64,
    pub s: f64,
    pub total: f64,
}

impl StepLoss {
    pub fn breakdown(&self, g: &Graph) -> LossBreakdown {
        let value = |v: Option<&(ContrastiveLoss, Vec<usize>)>| {
            v.map_or(0.0, |(l, _)| g.value(l.loss).item())
        };
        LossBreakdown {
            main: g.value(self.main).item(),
            g: value(self.g.as_ref()),
            s: value(self.s.as_ref()),
            total: g.value(self.total).item(),
        }
    }
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// Refits the clusters on the bank plus `batch_embed` and relabels the bank.
fn refresh_clusters(state: &mut TrainState, batch_embed: &Matrix, cfg: &TrainConfig) -> Result<()> {
    let mut points: Vec<Vec<f64>> = state.bank.iter().map(|e| e.embed.clone()).collect();
    points.extend(rows_of(batch_embed));
    let clusters = cfg.clusters.min(points.len());
    let fit = kmeans_fit(
        &points,
        clusters,
        cfg.kmeans_iters,
        &mut state.streams.kmeans,
    )?;
    for slot in state.bank.slots_mut() {
        slot.cluster = assign_cluster(&slot.embed, &fit.centroids);
    }
    state.centroids = Some(fit.centroids);
    Ok(())
}

fn cluster_of(state: &TrainState, embed: &[f64]) -> usize {
    state
        .centroids
        .as_ref()
        .map_or(0, |c| assign_cluster(embed, c))
}

/// A contrastive candidate fixed by a plan: a row of the batch's live
/// representation, or a detached vector.
#[derive(Clone, Debug, PartialEq)]
pub enum Candidate {
    Batch(usize),
    Fixed(Vec<f64>),
}

/// Generalized-term choices for one anchor: the positive first, then the
/// negatives, each with its similarity weight.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannedAnchor {
    pub anchor: usize,
    pub candidates: Vec<(Candidate, f64)>,
}

/// Individual-term choices for one anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannedTriple {
    pub anchor: usize,
    /// Batch rows of other scenarios, encoded by their own towers.
    pub other: Vec<usize>,
    /// Same-scenario batch rows and the foreign tower encoding each.
    pub cross: Vec<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct IndividualPlan {
    pub triples: Vec<PlannedTriple>,
    /// Source of the augmentation dropout masks.
    pub dropout: RngStream,
}

/// Every random draw and detached value of one step's objective. Building
/// the loss from a plan is deterministic, so a plan can be replayed at
/// perturbed parameters with the detached inputs held fixed.
#[derive(Clone, Debug)]
pub struct StepPlan {
    pub generalized: Option<Vec<PlannedAnchor>>,
    pub individual: Option<IndividualPlan>,
    /// Batch positions skipped by either term, once per term.
    pub skipped: Vec<usize>,
}

fn plan_generalized(
    e: &Matrix,
    z: &Matrix,
    batch: &[&Sample],
    state: &mut TrainState,
    cfg: &TrainConfig,
    skipped: &mut Vec<usize>,
) -> Result<Vec<PlannedAnchor>> {
    let fine = cfg.components.fine;
    if fine && (state.centroids.is_none() || state.step.is_multiple_of(cfg.refresh)) {
        refresh_clusters(state, e, cfg)?;
    }
    let rows: Vec<BatchRow<'_>> = batch
        .iter()
        .enumerate()
        .map(|(i, s)| BatchRow {
            label: s.label,
            scenario: s.scenario,
            cluster: if fine { cluster_of(state, e.row(i)) } else { 0 },
            z: z.row(i),
            embed: e.row(i),
        })
        .collect();
    let pool = CandidatePool::new(&rows, &state.bank);
    let diffused = if cfg.components.noise {
        cfg.negatives.div_ceil(2)
    } else {
        0
    };
    let weight = |anchor: &[f64], other: &[f64]| {
        if cfg.components.weight {
            reciprocal_weight(anchor, other, WEIGHT_EPS)
        } else {
            1.0
        }
    };
    let candidate = |idx: usize| {
        let item = &pool.items[idx];
        match item.provenance {
            Provenance::InBatch => Candidate::Batch(item.index),
            _ => Candidate::Fixed(item.z.to_vec()),
        }
    };
    let mut planned = Vec::new();
    for i in 0..batch.len() {
        let Some(mut set) =
            select_contrastive(i, &pool, cfg.negatives, fine, &mut state.streams.sampling)
        else {
            skipped.push(i);
            continue;
        };
        add_diffused_negatives(
            &mut set,
            &pool,
            diffused,
            &state.schedule,
            &mut state.streams.diffusion,
        )?;
        let e_i = e.row(i);
        let mut candidates = Vec::with_capacity(1 + set.negatives.len() + set.diffused.len());
        for j in std::iter::once(set.positive).chain(set.negatives.iter().copied()) {
            candidates.push((candidate(j), weight(e_i, pool.items[j].embed)));
        }
        for d in set.diffused {
            let w = weight(e_i, pool.items[d.source].embed);
            candidates.push((Candidate::Fixed(d.z), w));
        }
        planned.push(PlannedAnchor {
            anchor: i,
            candidates,
        });
    }
    Ok(planned)
}

fn plan_individual(
    batch: &[&Sample],
    scenarios: usize,
    state: &mut TrainState,
    cfg: &TrainConfig,
    skipped: &mut Vec<usize>,
) -> IndividualPlan {
    let rng = &mut state.streams.individual;
    let mut triples = Vec::new();
    for (i, s) in batch.iter().enumerate() {
        let other: Vec<usize> = (0..batch.len())
            .filter(|&j| batch[j].scenario != s.scenario)
            .collect();
        let within: Vec<usize> = (0..batch.len())
            .filter(|&j| j != i && batch[j].scenario == s.scenario)
            .collect();
        let other: Vec<usize> = index::sample(rng, other.len(), cfg.negatives.min(other.len()))
            .into_iter()
            .map(|j| other[j])
            .collect();
        let cross: Vec<(usize, usize)> = if scenarios < 2 {
            Vec::new()
        } else {
            index::sample(rng, within.len(), cfg.negatives.min(within.len()))
                .into_iter()
                .map(|j| {
                    let mut k = rng.below(scenarios - 1);
                    if k >= s.scenario {
                        k += 1;
                    }
                    (within[j], k)
                })
                .collect()
        };
        if other.is_empty() && cross.is_empty() {
            skipped.push(i);
            continue;
        }
        triples.push(PlannedTriple {
            anchor: i,
            other,
            cross,
        });
    }
    IndividualPlan {
        triples,
        dropout: state.streams.dropout.substream(&state.step.to_string()),
    }
}

/// Draws every sampling decision of one step from the batch's current
/// representations `e` and `z`. A term whose flag is off or whose
/// coefficient is zero is not planned and draws nothing from its streams.
/// With fine-grained selection on, the clusters are refit first when
/// `state.step` is a multiple of the refresh interval.
pub fn plan_step(
    e: &Matrix,
    z: &Matrix,
    batch: &[&Sample],
    scenarios: usize,
    state: &mut TrainState,
    cfg: &TrainConfig,
) -> Result<StepPlan> {
    let mut skipped = Vec::new();
    let generalized = if cfg.g_active() {
        Some(plan_generalized(e, z, batch, state, cfg, &mut skipped)?)
    } else {
        None
    };
    let individual = if cfg.s_active() {
        Some(plan_individual(batch, scenarios, state, cfg, &mut skipped))
    } else {
        None
    };
    Ok(StepPlan {
        generalized,
        individual,
        skipped,
    })
}

fn build_generalized(
    g: &mut Graph,
    fwd: &BatchForward,
    planned: &[PlannedAnchor],
    cfg: &TrainConfig,
) -> Result<Option<(ContrastiveLoss, Vec<usize>)>> {
    if planned.is_empty() {
        return Ok(None);
    }
    let repr = |c: &Candidate| match c {
        Candidate::Batch(j) => Repr::Row(fwd.z, *j),
        Candidate::Fixed(v) => Repr::Detached(v.clone()),
    };
    let sets: Vec<AnchorSet> = planned
        .iter()
        .map(|p| {
            let (pos, w) = &p.candidates[0];
            AnchorSet {
                anchor: Repr::Row(fwd.z, p.anchor),
                positive: WeightedPair::positive(*w, repr(pos)),
                negatives: p.candidates[1..]
                    .iter()
                    .map(|(c, w)| WeightedPair::negative(*w, repr(c)))
                    .collect(),
            }
        })
        .collect();
    let loss = generalized_loss_batch(g, &sets, cfg.tau, cfg.log_form)?;
    Ok(Some((loss, planned.iter().map(|p| p.anchor).collect())))
}

fn build_individual(
    g: &mut Graph,
    batch: &[&Sample],
    fwd: &BatchForward,
    vars: &ParamVars,
    plan: &IndividualPlan,
    cfg: &TrainConfig,
) -> Result<Option<(ContrastiveLoss, Vec<usize>)>> {
    if plan.triples.is_empty() {
        return Ok(None);
    }
    let scenarios = vars.towers.len();
    let mut masks = plan.dropout.clone();
    let (h_aug, _) = route_towers(g, batch, fwd.z, vars, cfg.dropout, &mut masks)?;
    // encode each (row, foreign tower) pair once, however many anchors use it
    let mut slot_of = vec![vec![usize::MAX; batch.len()]; scenarios];
    let mut cross_rows: Vec<Vec<usize>> = vec![Vec::new(); scenarios];
    for t in &plan.triples {
        for &(j, k) in &t.cross {
            if slot_of[k][j] == usize::MAX {
                slot_of[k][j] = cross_rows[k].len();
                cross_rows[k].push(j);
            }
        }
    }
    let mut cross_nodes: Vec<Option<Var>> = vec![None; scenarios];
    let mut unused = RngStream::new(0, "unused");
    for (k, rows) in cross_rows.into_iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        let zk = g.gather_rows(fwd.z, rows)?;
        cross_nodes[k] = Some(specific_forward(g, k, zk, vars, 0.0, &mut unused)?);
    }
    let triples: Vec<IndividualTriple> = plan
        .triples
        .iter()
        .map(|t| IndividualTriple {
            h: Repr::Row(fwd.h, t.anchor),
            h_aug: Repr::Row(h_aug, t.anchor),
            neg_other: t.other.iter().map(|&j| Repr::Row(fwd.h, j)).collect(),
            neg_cross: t
                .cross
                .iter()
                .map(|&(j, k)| Repr::Row(cross_nodes[k].expect("encoded above"), slot_of[k][j]))
                .collect(),
        })
        .collect();
    let loss = individual_loss_batch(g, &triples, cfg.tau, cfg.log_form)?;
    Ok(Some((
        loss,
        plan.triples.iter().map(|t| t.anchor).collect(),
    )))
}

/// Builds `L_main + lambda1 * L_g + lambda2 * L_s` on top of a batch's
/// forward pass, following `plan`. Terms the plan leaves out are absent.
pub fn build_loss(
    g: &mut Graph,
    batch: &[&Sample],
    vars: &ParamVars,
    forward: BatchForward,
    plan: &StepPlan,
    cfg: &TrainConfig,
) -> Result<StepLoss> {
    let main = cross_entropy(g, forward.probs, batch)?;
    let gl = match &plan.generalized {
        Some(p) => build_generalized(g, &forward, p, cfg)?,
        None => None,
    };
    let sl = match &plan.individual {
        Some(p) => build_individual(g, batch, &forward, vars, p, cfg)?,
        None => None,
    };
    let mut total = main;
    for (term, lambda) in [(&gl, cfg.lambda1), (&sl, cfg.lambda2)] {
        if let Some((l, _)) = term {
            let scaled = g.scale(l.loss, lambda);
            total = g.add(total, scaled)?;
        }
    }
    let step = StepLoss {
        total,
        main,
        forward,
        g: gl,
        s: sl,
        skipped: plan.skipped.clone(),
    };
    let b = step.breakdown(g);
    if !b.total.is_finite() {
        return Err(Error::numeric(format!(
            "non-finite loss: total {} = main {} + {} * g {} + {} * s {}",
            b.total, b.main, cfg.lambda1, b.g, cfg.lambda2, b.s
        )));
    }
    Ok(step)
}

/// Forward pass, plan and objective of one batch in a single graph.
pub fn total_loss(
    g: &mut Graph,
    batch: &[&Sample],
    vars: &ParamVars,
    state: &mut TrainState,
    cfg: &TrainConfig,
) -> Result<StepLoss> {
    let mut unused = RngStream::new(0, "unused");
    let forward = forward_batch(g, batch, vars, 0.0, &mut unused)?;
    let plan = if cfg.g_active() || cfg.s_active() {
        let e = g.value(forward.e).clone();
        let z = g.value(forward.z).clone();
        plan_step(&e, &z, batch, vars.towers.len(), state, cfg)?
    } else {
        StepPlan {
            generalized: None,
            individual: None,
            skipped: Vec::new(),
        }
    };
    build_loss(g, batch, vars, forward, &plan, cfg)
}

/// Per-scenario sums of the contrastive terms over one epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochStats {
    pub g_sum: Vec<f64>,
    pub g_count: Vec<u64>,
    pub s_sum: Vec<f64>,
    pub s_count: Vec<u64>,
    pub skipped: Vec<u64>,
}

impl EpochStats {
    pub fn new(scenarios: usize) -> Self {
        Self {
            g_sum: vec![0.0; scenarios],
            g_count: vec![0; scenarios],
            s_sum: vec![0.0; scenarios],
            s_count: vec![0; scenarios],
            skipped: vec![0; scenarios],
        }
    }

    fn record(&mut self, batch: &[&Sample], step: &StepReport) {
        let terms = [
            (&step.g, &mut self.g_sum, &mut self.g_count),
            (&step.s, &mut self.s_sum, &mut self.s_count),
        ];
        for (term, sum, count) in terms {
            if let Some((values, anchors)) = term {
                for (&i, &v) in anchors.iter().zip(values) {
                    sum[batch[i].scenario] += v;
                    count[batch[i].scenario] += 1;
                }
            }
        }
        for &i in &step.skipped {
            self.skipped[batch[i].scenario] += 1;
        }
    }
}

fn mean(sum: f64, count: u64) -> f64 {
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Uniformity of the shared representations of one epoch's evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    pub epoch: usize,
    pub uniformity: Option<f64>,
    /// Zero-norm vectors left out of the uniformity.
    pub zero_norm: usize,
}

/// Metrics rows for one evaluation of the test split.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<MetricsRow>,
    pub diagnostics: Diagnostics,
}

/// Scores the test split with dropout off. Rows for scenarios `0..K`, then
/// the pooled row. AUC and `loss_main` come from the test split; the
/// contrastive columns come from `stats` and are zero without it.
pub fn evaluate(
    params: &ModelParams,
    test: &[Sample],
    epoch: usize,
    stats: Option<&EpochStats>,
    uniformity_limit: usize,
) -> Result<Evaluation> {
    let scenarios = params.shape.scenarios;
    let samples: Vec<&Sample> = test.iter().collect();
    let (probs, z) = if samples.is_empty() {
        (Vec::new(), Matrix::zeros(0, 0))
    } else {
        let inf = infer(params, &samples)?;
        (inf.probs, inf.z)
    };
    let empty = EpochStats::new(scenarios);
    let stats = stats.unwrap_or(&empty);
    let mut rows = Vec::with_capacity(scenarios + 1);
    let score = |filter: &dyn Fn(&Sample) -> bool| {
        let idx: Vec<usize> = (0..samples.len()).filter(|&i| filter(samples[i])).collect();
        let scores: Vec<f64> = idx.iter().map(|&i| probs[i]).collect();
        let labels: Vec<u8> = idx.iter().map(|&i| samples[i].label).collect();
        let bce: f64 = idx
            .iter()
            .map(|&i| crate::math::bce(samples[i].target(), probs[i]))
            .sum();
        (auc(&scores, &labels), mean(bce, idx.len() as u64))
    };
    for k in 0..scenarios {
        let (a, loss_main) = score(&|s| s.scenario == k);
        rows.push(MetricsRow {
            epoch,
            scenario: k as i64,
            auc: a,
            loss_main,
            loss_g: mean(stats.g_sum[k], stats.g_count[k]),
            loss_s: mean(stats.s_sum[k], stats.s_count[k]),
            skipped: stats.skipped[k],
        });
    }
    let (a, loss_main) = score(&|_| true);
    rows.push(MetricsRow {
        epoch,
        scenario: ALL_SCENARIOS,
        auc: a,
        loss_main,
        loss_g: mean(stats.g_sum.iter().sum(), stats.g_count.iter().sum()),
        loss_s: mean(stats.s_sum.iter().sum(), stats.s_count.iter().sum()),
        skipped: stats.skipped.iter().sum(),
    });
    let n = z.rows().min(uniformity_limit);
    let picked: Vec<&[f64]> = (0..n).map(|i| z.row(i * z.rows() / n)).collect();
    let (u, zero_norm) = uniformity(&picked);
    Ok(Evaluation {
        rows,
        diagnostics: Diagnostics {
            epoch,
            uniformity: u,
            zero_norm,
        },
    })
}

/// Result of a full training run.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub metrics: Vec<MetricsRow>,
    pub diagnostics: Vec<Diagnostics>,
    pub params: ModelParams,
}

fn with_context(err: Error, ctx: &str) -> Error {
    match err {
        Error::Numeric(m) => Error::Numeric(format!("{ctx}: {m}")),
        Error::Data(m) => Error::Data(format!("{ctx}: {m}")),
        Error::Contract(m) => Error::Contract(format!("{ctx}: {m}")),
        Error::Graph(m) => Error::Graph(format!("{ctx}: {m}")),
        other => other,
    }
}

/// Values of one completed step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub loss: LossBreakdown,
    /// Per-anchor generalized losses and the anchors' batch positions.
    pub g: Option<(Vec<f64>, Vec<usize>)>,
    pub s: Option<(Vec<f64>, Vec<usize>)>,
    pub skipped: Vec<usize>,
}

/// One optimizer step on `batch`, followed by the bank update with the
/// post-step representations.
pub fn train_step(
    params: &mut ModelParams,
    adam: &mut AdamState,
    batch: &[&Sample],
    state: &mut TrainState,
    cfg: &TrainConfig,
) -> Result<StepReport> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let step = total_loss(&mut g, batch, &vars, state, cfg)?;
    let report = StepReport {
        loss: step.breakdown(&g),
        g: step.g.map(|(l, a)| (l.per_anchor, a)),
        s: step.s.map(|(l, a)| (l.per_anchor, a)),
        skipped: step.skipped,
    };
    g.backward(step.total)?;
    let grads = vars.gradients(&g);
    let names = params.tensor_names();
    adam_step(&mut params.tensors_mut(), &names, &grads, adam, cfg.lr)?;
    state.step += 1;
    if cfg.g_active() && state.bank.capacity() > 0 {
        let inf = infer(params, batch)?;
        for (i, s) in batch.iter().enumerate() {
            let embed = inf.e.row(i).to_vec();
            state.bank.push(MemoryBankEntry {
                z: inf.z.row(i).to_vec(),
                cluster: if cfg.components.fine {
                    cluster_of(state, &embed)
                } else {
                    0
                },
                embed,
                label: s.label,
                scenario: s.scenario,
            });
        }
    }
    Ok(report)
}

/// Trains from a fresh initialization for `cfg.epochs` epochs, evaluating
/// before the first epoch and after each one.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    data.validate()?;
    if data.train.is_empty() && cfg.epochs > 0 {
        return Err(Error::data("no training samples"));
    }
    let shape = cfg.model_shape(&data.schema);
    let mut params = ModelParams::init(shape, &mut init_stream(cfg.seed))?;
    let mut adam = AdamState::new(params.tensors());
    let mut state = TrainState::new(cfg)?;
    let mut metrics = Vec::new();
    let mut diagnostics = Vec::new();
    let eval = evaluate(&params, &data.test, 0, None, cfg.uniformity_limit)?;
    metrics.extend(eval.rows);
    diagnostics.push(eval.diagnostics);
    for epoch in 1..=cfg.epochs {
        let mut stats = EpochStats::new(data.schema.scenarios);
        let batches = batch_iter(data.train.len(), cfg.batch, &mut state.streams.batch)?;
        let mut totals = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &data.train[i]).collect();
            let step = train_step(&mut params, &mut adam, &batch, &mut state, cfg)
                .map_err(|e| with_context(e, &format!("epoch {epoch} step {b}")))?;
            stats.record(&batch, &step);
            totals += step.loss.total;
        }
        let eval = evaluate(
            &params,
            &data.test,
            epoch,
            Some(&stats),
            cfg.uniformity_limit,
        )?;
        let pooled = eval.rows.last().expect("pooled row");
        log::info!(
            "epoch {epoch}: train loss {:.4}, test auc {}, uniformity {:?}",
            totals / batches.len() as f64,
            pooled.auc.map_or("nan".into(), |a| format!("{a:.4}")),
            eval.diagnostics.uniformity
        );
        metrics.extend(eval.rows);
        diagnostics.push(eval.diagnostics);
    }
    Ok(TrainOutput {
        metrics,
        diagnostics,
        params,
    })
}
