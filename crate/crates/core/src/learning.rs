//! Objective, split-node gradients, leaf updates and the alternating trainer.
//!
//! Training alternates two phases:
//!
//! * **θ phase**: `n_theta` mini-batches of SGD on the backbone. For each
//!   sample and tree the loss gradient with respect to the feature feeding
//!   split `n` is
//!
//!   ```text
//!   ∂ℓ/∂f[γ(n)] = Σ_k Σ_c d^(k,c) · ( s_n · g_k^c(T_n^r) − (1 − s_n) · g_k^c(T_n^l) ) / g_k^c(T)
//!   ```
//!
//!   where `g_k^c(T_n^·)` are the subtree sums from
//!   [`SubtreePartials`]. Per-tree gradients are averaged over the forest
//!   and pushed through [`Backbone::backward_accumulate`](crate::backbone::Backbone::backward_accumulate).
//! * **τ phase**: with θ frozen, every leaf entry is replaced by the
//!   minimizer of a Jensen upper bound on the loss that touches it at the
//!   current table:
//!
//!   ```text
//!   τ_l^k ← Σ_i d_i^k ξ_l(τ^k) / ( Σ_i d_i^k ξ_l(τ^k) + Σ_i (1 − d_i^k) ξ_l(1 − τ^k) )
//!   ξ_l(τ^k, x_i) = p(l|x_i) τ_l^k / Σ_l' p(l'|x_i) τ_l'^k
//!   ```
//!
//!   Each application never increases the loss on the cached samples.

use crate::backbone::{BackboneArch, MomentumSgd};
use crate::data::{self, Dataset};
use crate::error::{CorfError, Result};
use crate::forest::Forest;
use crate::metrics;
use crate::model::CorfModel;
use crate::ordinal::{OrdinalPrediction, OrdinalTarget};
use crate::tree::{self, LeafTable, Routing, SubtreePartials, TreeTopology};

/// Cross entropy between a soft prediction and a 0/1 target, summed over
/// thresholds. Predictions are clamped to `[eps, 1 - eps]` first.
pub fn loss(g: &OrdinalPrediction, d: &OrdinalTarget, eps: f64) -> f64 {
    debug_assert_eq!(g.len(), d.len());
    let mut total = 0.0;
    for (&gk, &dk) in g.as_slice().iter().zip(d.as_slice()) {
        let p = gk.clamp(eps, 1.0 - eps);
        if dk != 0.0 {
            total -= dk * p.ln();
        }
        if dk != 1.0 {
            total -= (1.0 - dk) * (1.0 - p).ln();
        }
    }
    total
}

/// Loss gradient with respect to each split node's input feature.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitGradient {
    pub per_split: Vec<f64>,
    /// Denominators `g_k^c(T)` that fell below `eps` and were clamped.
    pub clamped: usize,
}

/// Split gradients for one sample and tree with a 0/1 target.
pub fn feature_grad(
    routing: &Routing,
    partials: &SubtreePartials,
    target: &OrdinalTarget,
    eps: f64,
) -> SplitGradient {
    feature_grad_weighted(routing, partials, &target.channel_weights(), eps)
}

/// Split gradients with arbitrary channel weights `d^(k,c)` (`weights[k][c]`).
///
/// The result omits the `1/N` batch factor.
pub fn feature_grad_weighted(
    routing: &Routing,
    partials: &SubtreePartials,
    weights: &[[f64; 2]],
    eps: f64,
) -> SplitGradient {
    let splits = partials.split_count();
    let thresholds = partials.thresholds();
    debug_assert_eq!(weights.len(), thresholds);
    let mut clamped = 0;
    // Inverse totals once per (k, c).
    let mut inv_total = vec![[0.0; 2]; thresholds];
    for (k, inv) in inv_total.iter_mut().enumerate() {
        for c in 0..2 {
            if weights[k][c] == 0.0 {
                continue;
            }
            let mut g = partials.total(k, c);
            if g < eps {
                g = eps;
                clamped += 1;
            }
            inv[c] = weights[k][c] / g;
        }
    }
    let per_split = (0..splits)
        .map(|n| {
            let s = routing.split()[n];
            let mut acc = 0.0;
            for (k, inv) in inv_total.iter().enumerate() {
                for c in 0..2 {
                    if inv[c] == 0.0 {
                        continue;
                    }
                    acc += inv[c] * (s * partials.right(n, k, c) - (1.0 - s) * partials.left(n, k, c));
                }
            }
            acc
        })
        .collect();
    SplitGradient { per_split, clamped }
}

/// Adds `scale · per_split[n]` into `grad_f[γ(n)]`; splits sharing a feature accumulate.
pub fn scatter_to_features(topology: &TreeTopology, split_grad: &[f64], scale: f64, grad_f: &mut [f64]) {
    for (&g, &slot) in split_grad.iter().zip(topology.gamma()) {
        grad_f[slot] += scale * g;
    }
}

/// Routings of one tree over the cached samples, with their targets.
#[derive(Debug, Clone, Copy)]
pub struct CacheView<'a> {
    pub routings: &'a [Routing],
    pub targets: &'a [OrdinalTarget],
}

/// The accumulated samples of one θ phase, routed under a fixed θ.
#[derive(Debug, Clone, Default)]
pub struct BatchCache {
    targets: Vec<OrdinalTarget>,
    // [tree][sample]
    routings: Vec<Vec<Routing>>,
}

impl BatchCache {
    /// Routes every sample through every tree of `model` under its current θ.
    pub fn build(model: &CorfModel, data: &Dataset, indices: &[usize]) -> Result<Self> {
        let mut routings = vec![Vec::with_capacity(indices.len()); model.forest.len()];
        let mut targets = Vec::with_capacity(indices.len());
        for &i in indices {
            let f = model.backbone.forward(data.features(i))?;
            for (m, t) in model.forest.trees().iter().enumerate() {
                routings[m].push(t.route(&f)?);
            }
            targets.push(data.target(i));
        }
        Ok(Self { targets, routings })
    }

    pub fn from_parts(targets: Vec<OrdinalTarget>, routings: Vec<Vec<Routing>>) -> Self {
        Self { targets, routings }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn tree(&self, m: usize) -> CacheView<'_> {
        CacheView {
            routings: &self.routings[m],
            targets: &self.targets,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeafUpdate {
    pub leaves: LeafTable,
    /// Clamped mixture denominators plus entries left unchanged.
    pub clamped: usize,
}

/// One synchronous application of the leaf-update rule to every `(l, k)`.
pub fn leaf_update(leaves: &LeafTable, cache: CacheView<'_>, eps: f64) -> Result<LeafUpdate> {
    let n = cache.targets.len();
    if n == 0 {
        return Err(CorfError::Empty("leaf update needs a non-empty cache"));
    }
    if cache.routings.len() != n {
        return Err(CorfError::shape("cached routings", n, cache.routings.len()));
    }
    let nl = leaves.leaves();
    let nk = leaves.thresholds();
    let tau = leaves.as_slice();
    let mut clamped = 0;

    let mut num = vec![0.0; nl * nk];
    let mut alt = vec![0.0; nl * nk];
    let mut mix = vec![[0.0; 2]; nk];
    for (routing, target) in cache.routings.iter().zip(cache.targets) {
        let p = routing.leaf();
        if p.len() != nl {
            return Err(CorfError::shape("routing leaves", nl, p.len()));
        }
        if target.len() != nk {
            return Err(CorfError::shape("target length", nk, target.len()));
        }
        for (k, m) in mix.iter_mut().enumerate() {
            let (mut g1, mut g2) = (0.0, 0.0);
            for (l, &pl) in p.iter().enumerate() {
                let t = tau[l * nk + k];
                g1 += pl * t;
                g2 += pl * (1.0 - t);
            }
            for (slot, g) in m.iter_mut().zip([g1, g2]) {
                *slot = if g < eps {
                    clamped += 1;
                    eps
                } else {
                    g
                };
            }
        }
        let d = target.as_slice();
        for (l, &pl) in p.iter().enumerate() {
            for k in 0..nk {
                let t = tau[l * nk + k];
                if d[k] != 0.0 {
                    num[l * nk + k] += d[k] * (pl * t / mix[k][0]);
                }
                if d[k] != 1.0 {
                    alt[l * nk + k] += (1.0 - d[k]) * (pl * (1.0 - t) / mix[k][1]);
                }
            }
        }
    }

    let mut out = leaves.clone();
    for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
        let denom = num[i] + alt[i];
        if denom < eps {
            clamped += 1;
            continue;
        }
        *v = (num[i] / denom).clamp(eps, 1.0 - eps);
    }
    Ok(LeafUpdate { leaves: out, clamped })
}

/// Mean per-sample tree loss over a cache view.
pub fn cache_loss(leaves: &LeafTable, cache: CacheView<'_>, eps: f64) -> Result<f64> {
    let mut total = 0.0;
    for (r, d) in cache.routings.iter().zip(cache.targets) {
        total += loss(&tree::predict(r, leaves)?, d, eps);
    }
    Ok(total / cache.targets.len() as f64)
}

/// Every knob of the alternating trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub trees: usize,
    pub depth: usize,
    pub features: usize,
    /// Mini-batches per θ phase.
    pub n_theta: usize,
    /// Leaf-update iterations per τ phase.
    pub n_tau: usize,
    pub lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_period: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub eps: f64,
    pub seed: u64,
    /// Stop when validation MAE has not improved for this many epochs; 0 disables.
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            trees: 5,
            depth: 6,
            features: 128,
            n_theta: 10,
            n_tau: 20,
            lr: 0.001,
            lr_decay_factor: 0.2,
            lr_decay_period: 15,
            epochs: 40,
            batch_size: 64,
            momentum: 0.0,
            eps: 1e-12,
            seed: 0,
            early_stop_patience: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CorfError::Config(m));
        if self.trees == 0 {
            return bad("trees must be >= 1".into());
        }
        if !(2..=30).contains(&self.depth) {
            return bad(format!("depth must be in 2..=30, got {}", self.depth));
        }
        if self.features == 0 {
            return bad("features must be >= 1".into());
        }
        if self.n_theta == 0 || self.n_tau == 0 || self.batch_size == 0 {
            return bad("n_theta, n_tau and batch_size must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad(format!("lr_decay_factor must be in (0, 1], got {}", self.lr_decay_factor));
        }
        if self.lr_decay_period == 0 {
            return bad("lr_decay_period must be >= 1".into());
        }
        if !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.eps > 0.0 && self.eps <= 1e-6) {
            return bad(format!("eps must be in (0, 1e-6], got {}", self.eps));
        }
        Ok(())
    }

    /// Learning rate in effect during 0-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay_factor.powi((epoch / self.lr_decay_period) as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Val,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Val => "val",
        }
    }
}

/// One line of the epoch log. Epoch 0 describes the untrained model.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub loss: f64,
    pub mae: f64,
    pub clamp_events: usize,
    pub lr: f64,
    /// Mean over trees of the fraction of non-increasing leaf rows.
    pub monotone_fraction: f64,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,phase,loss,mae,clamp_events,lr,monotone_fraction";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:?},{:?},{},{:?},{:?}",
            self.epoch,
            self.phase.name(),
            self.loss,
            self.mae,
            self.clamp_events,
            self.lr,
            self.monotone_fraction
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CorfModel,
    pub log: Vec<EpochRecord>,
    pub epochs_run: usize,
}

/// Forest loss and MAE (rank indices) of `model` over a whole dataset.
pub fn evaluate(model: &CorfModel, data: &Dataset, eps: f64) -> Result<(f64, f64)> {
    let mut total = 0.0;
    let mut pred = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let f = model.backbone.forward(data.features(i))?;
        let per_tree = model
            .forest
            .trees()
            .iter()
            .map(|t| t.predict(&f))
            .collect::<Result<Vec<_>>>()?;
        total += crate::forest::forest_loss(&per_tree, &data.target(i), eps);
        let g = crate::forest::average_predictions(&per_tree);
        pred.push(model.forest.spec().decode_index(&g)?);
    }
    Ok((total / data.len() as f64, metrics::mae(&pred, data.rank_indices())?))
}

/// Forest loss averaged over `indices`, and its gradient with respect to θ.
/// Samples reduce in the order given.
pub fn batch_loss_and_grad(
    model: &CorfModel,
    data: &Dataset,
    indices: &[usize],
    eps: f64,
) -> Result<(f64, Vec<f64>, usize)> {
    let mut grad = vec![0.0; model.backbone.params().len()];
    let mut total = 0.0;
    let mut clamped = 0;
    let trees = model.forest.len() as f64;
    let scale = 1.0 / (indices.len() as f64 * trees);
    let mut grad_f = vec![0.0; model.backbone.output_dim()];
    for &i in indices {
        let x = data.features(i);
        let target = data.target(i);
        let f = model.backbone.forward(x)?;
        grad_f.iter_mut().for_each(|v| *v = 0.0);
        let mut sample_loss = 0.0;
        for t in model.forest.trees() {
            let routing = t.route(&f)?;
            let g = tree::predict(&routing, &t.leaves)?;
            sample_loss += loss(&g, &target, eps);
            let partials = SubtreePartials::compute(&routing, &t.leaves)?;
            let sg = feature_grad(&routing, &partials, &target, eps);
            clamped += sg.clamped;
            scatter_to_features(&t.topology, &sg.per_split, scale, &mut grad_f);
        }
        total += sample_loss / trees;
        model.backbone.backward_accumulate(x, &grad_f, &mut grad)?;
    }
    Ok((total / indices.len() as f64, grad, clamped))
}

fn mean_monotone_fraction(forest: &Forest) -> f64 {
    forest.trees().iter().map(|t| t.leaves.monotone_fraction()).sum::<f64>() / forest.len() as f64
}

/// Runs `n_tau` leaf updates per tree on the cached indices; returns clamp events.
fn leaf_phase(model: &mut CorfModel, data: &Dataset, cached: &[usize], config: &TrainConfig) -> Result<usize> {
    let cache = BatchCache::build(model, data, cached)?;
    let mut clamped = 0;
    for (m, t) in model.forest.trees_mut().iter_mut().enumerate() {
        for _ in 0..config.n_tau {
            let upd = leaf_update(&t.leaves, cache.tree(m), config.eps)?;
            clamped += upd.clamped;
            t.leaves = upd.leaves;
        }
    }
    Ok(clamped)
}

/// Alternating optimization of backbone and leaves.
///
/// The batch cache is flushed into a leaf phase whenever it holds `n_theta`
/// batches and again at the end of each epoch.
pub fn train(
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    arch: BackboneArch,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let model = CorfModel::init(arch, *train_set.spec(), config)?;
    train_from(model, train_set, val_set, config)
}

/// As [`train`], starting from an existing model.
pub fn train_from(
    mut model: CorfModel,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(CorfError::Empty("training set"));
    }
    if train_set.feature_dim() != model.backbone.arch().input_dim {
        return Err(CorfError::shape(
            "training features",
            model.backbone.arch().input_dim,
            train_set.feature_dim(),
        ));
    }
    if train_set.spec() != model.forest.spec() {
        return Err(CorfError::Config("training set label space differs from the model's".into()));
    }

    let mut log = Vec::new();
    let record = |model: &CorfModel, data: &Dataset, epoch: usize, phase: Phase, clamp_events: usize, lr: f64| -> Result<EpochRecord> {
        let (loss, mae) = evaluate(model, data, config.eps)?;
        Ok(EpochRecord {
            epoch,
            phase,
            loss,
            mae,
            clamp_events,
            lr,
            monotone_fraction: mean_monotone_fraction(&model.forest),
        })
    };
    log.push(record(&model, train_set, 0, Phase::Train, 0, config.lr_at(0))?);
    if let Some(v) = val_set {
        log.push(record(&model, v, 0, Phase::Val, 0, config.lr_at(0))?);
    }

    let mut optimizer = MomentumSgd::new(config.momentum, model.backbone.params().len());
    let mut best_val = f64::INFINITY;
    let mut since_best = 0;
    let mut epochs_run = 0;
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let mut clamp_events = 0;
        let mut cached: Vec<usize> = Vec::new();
        let mut cached_batches = 0;
        for (b, batch) in data::batches(train_set.len(), config.batch_size, config.seed, epoch)
            .into_iter()
            .enumerate()
        {
            let (batch_loss, grad, clamped) = batch_loss_and_grad(&model, train_set, &batch, config.eps)?;
            if !batch_loss.is_finite() {
                return Err(CorfError::Numeric(format!(
                    "non-finite loss {batch_loss} at epoch {} batch {b} (samples {:?})",
                    epoch + 1,
                    batch
                )));
            }
            clamp_events += clamped;
            optimizer.step(&mut model.backbone, &grad, lr).map_err(|e| {
                CorfError::Numeric(format!("epoch {} batch {b}: {e}", epoch + 1))
            })?;
            cached.extend_from_slice(&batch);
            cached_batches += 1;
            if cached_batches == config.n_theta {
                clamp_events += leaf_phase(&mut model, train_set, &cached, config)?;
                cached.clear();
                cached_batches = 0;
            }
        }
        if !cached.is_empty() {
            clamp_events += leaf_phase(&mut model, train_set, &cached, config)?;
        }
        epochs_run = epoch + 1;
        log.push(record(&model, train_set, epochs_run, Phase::Train, clamp_events, lr)?);
        if let Some(v) = val_set {
            let rec = record(&model, v, epochs_run, Phase::Val, 0, lr)?;
            let val_mae = rec.mae;
            log.push(rec);
            if config.early_stop_patience > 0 {
                if val_mae < best_val {
                    best_val = val_mae;
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= config.early_stop_patience {
                        break;
                    }
                }
            }
        }
    }
    Ok(TrainOutcome {
        model,
        log,
        epochs_run,
    })
}
