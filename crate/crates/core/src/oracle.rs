//! Slow reference implementations used to check the optimized paths, plus
//! the gradient-check harness behind `corf gradcheck`.
//!
//! Nothing here shares code with the routines it checks: routing walks each
//! root-to-leaf path explicitly, the leaf update is a term-by-term
//! transcription of the update rule, and the loss is evaluated in its
//! two-channel form.

use rand::Rng;

use crate::backbone::{Activation, ArchKind, Backbone, BackboneArch};
use crate::data::Dataset;
use crate::error::{CorfError, Result};
use crate::forest::Forest;
use crate::learning::{self, CacheView};
use crate::model::CorfModel;
use crate::ordinal::OrdinalSpec;
use crate::seed;
use crate::tree::{self, LeafTable, TreeTopology};

/// Central-difference gradient: `(ℓ(p + h·e_i) − ℓ(p − h·e_i)) / 2h` per coordinate.
pub fn fd_grad(mut loss: impl FnMut(&[f64]) -> f64, params: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(CorfError::Config(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut p = params.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = loss(&p);
        p[i] = orig - h;
        let down = loss(&p);
        p[i] = orig;
        if !(up.is_finite() && down.is_finite()) {
            return Err(CorfError::Numeric(format!(
                "non-finite loss when perturbing coordinate {i}"
            )));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both norms are below `1e-10`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale < 1e-10 {
        return diff;
    }
    diff / scale
}

/// True if `node` lies in the subtree rooted at `root` (inclusive).
pub fn is_ancestor(root: usize, mut node: usize) -> bool {
    loop {
        if node == root {
            return true;
        }
        if node == 0 || node < root {
            return false;
        }
        node = (node - 1) / 2;
    }
}

fn logistic(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        z.exp() / (1.0 + z.exp())
    };
    s.clamp(tree::SIGMOID_FLOOR, 1.0 - tree::SIGMOID_FLOOR)
}

/// Leaf probabilities by multiplying branch probabilities along each path.
pub fn route_by_paths(f: &[f64], topology: &TreeTopology) -> Vec<f64> {
    let splits = topology.split_count();
    (0..topology.leaf_count())
        .map(|l| {
            let mut path = Vec::new();
            let mut node = splits + l;
            while node != 0 {
                let parent = (node - 1) / 2;
                path.push((parent, node == 2 * parent + 1));
                node = parent;
            }
            path.reverse();
            let mut p = 1.0;
            for (split, went_left) in path {
                let s = logistic(f[topology.gamma()[split]]);
                p *= if went_left { s } else { 1.0 - s };
            }
            p
        })
        .collect()
}

/// `g[k] = Σ_l p[l]·τ[l][k]` by explicit double loop.
pub fn predict_double_sum(p: &[f64], leaves: &LeafTable) -> Vec<f64> {
    (0..leaves.thresholds())
        .map(|k| {
            let mut g = 0.0;
            for (l, &pl) in p.iter().enumerate() {
                g += pl * leaves.get(l, k);
            }
            g
        })
        .collect()
}

/// Left and right subtree sums under split `split`, each summed from scratch.
pub fn subtree_sums_direct(p: &[f64], leaves: &LeafTable, split: usize, k: usize, c: usize) -> (f64, f64) {
    let splits = p.len() - 1;
    let side = |root: usize| -> f64 {
        (0..p.len())
            .filter(|&l| is_ancestor(root, splits + l))
            .map(|l| p[l] * leaves.channel(l, k, c))
            .sum()
    };
    (side(2 * split + 1), side(2 * split + 2))
}

/// Two-channel cross entropy `−Σ_k Σ_c d^(k,c) log g^(k,c)` for a given `g`.
pub fn loss_two_channel(g: &[f64], d: &[f64], eps: f64) -> f64 {
    let mut total = 0.0;
    for k in 0..g.len() {
        let channels = [(d[k], g[k]), (1.0 - d[k], 1.0 - g[k])];
        for (w, v) in channels {
            if w != 0.0 {
                total -= w * v.clamp(eps, 1.0 - eps).ln();
            }
        }
    }
    total
}

/// Two-channel loss with each channel mixture `Σ_l p τ^(k,c)` formed directly.
pub fn loss_two_channel_mixture(p: &[f64], leaves: &LeafTable, d: &[f64]) -> f64 {
    let mut total = 0.0;
    for (k, &dk) in d.iter().enumerate() {
        for (c, w) in [dk, 1.0 - dk].into_iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let mix: f64 = (0..p.len()).map(|l| p[l] * leaves.channel(l, k, c)).sum();
            total -= w * mix.ln();
        }
    }
    total
}

/// Literal leaf update: every `ξ` recomputed from scratch for each `(l, k, i)`.
pub fn leaf_update_naive(leaves: &LeafTable, cache: CacheView<'_>, eps: f64) -> Result<LeafTable> {
    if cache.targets.is_empty() {
        return Err(CorfError::Empty("leaf update needs a non-empty cache"));
    }
    let nl = leaves.leaves();
    let nk = leaves.thresholds();
    let mut out = Vec::with_capacity(nl * nk);
    for l in 0..nl {
        for k in 0..nk {
            let tau = leaves.get(l, k);
            let mut num = 0.0;
            let mut alt = 0.0;
            for (r, target) in cache.routings.iter().zip(cache.targets) {
                let p = r.leaf();
                let d = target.get(k);
                let mut g1 = 0.0;
                let mut g2 = 0.0;
                for (lp, &pl) in p.iter().enumerate() {
                    g1 += pl * leaves.get(lp, k);
                    g2 += pl * (1.0 - leaves.get(lp, k));
                }
                let xi1 = p[l] * tau / g1.max(eps);
                let xi2 = p[l] * (1.0 - tau) / g2.max(eps);
                if d != 0.0 {
                    num += d * xi1;
                }
                if d != 1.0 {
                    alt += (1.0 - d) * xi2;
                }
            }
            let denom = num + alt;
            out.push(if denom < eps { tau } else { (num / denom).clamp(eps, 1.0 - eps) });
        }
    }
    LeafTable::from_rows(nl, nk, out)
}

/// Dense network forward pass by explicit index loops.
pub fn mlp_forward_naive(arch: &BackboneArch, params: &[f64], x: &[f64]) -> Vec<f64> {
    let dense = |w: &[f64], b: &[f64], input: &[f64], n_out: usize| -> Vec<f64> {
        let mut out = vec![0.0; n_out];
        for j in 0..n_out {
            let mut acc = b[j];
            for i in 0..input.len() {
                acc += input[i] * w[i * n_out + j];
            }
            out[j] = acc;
        }
        out
    };
    match arch.kind {
        ArchKind::Linear => {
            let nw = arch.input_dim * arch.output_dim;
            dense(&params[..nw], &params[nw..], x, arch.output_dim)
        }
        ArchKind::Mlp1 => {
            let n1 = arch.input_dim * arch.hidden_dim;
            let w1 = &params[..n1];
            let b1 = &params[n1..n1 + arch.hidden_dim];
            let start = n1 + arch.hidden_dim;
            let n2 = arch.hidden_dim * arch.output_dim;
            let w2 = &params[start..start + n2];
            let b2 = &params[start + n2..];
            let hidden: Vec<f64> = dense(w1, b1, x, arch.hidden_dim)
                .into_iter()
                .map(|z| match arch.activation {
                    Activation::Tanh => z.tanh(),
                    Activation::Relu => z.max(0.0),
                })
                .collect();
            dense(w2, b2, &hidden, arch.output_dim)
        }
    }
}

/// Forest loss over a set of samples, computed only with oracle routines.
pub fn forest_loss_naive(params: &[f64], arch: &BackboneArch, forest: &Forest, data: &Dataset, eps: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..data.len() {
        let f = mlp_forward_naive(arch, params, data.features(i));
        let d = data.target(i);
        let mut per_tree = 0.0;
        for t in forest.trees() {
            let p = route_by_paths(&f, &t.topology);
            let g = predict_double_sum(&p, &t.leaves);
            per_tree += loss_two_channel(&g, d.as_slice(), eps);
        }
        total += per_tree / forest.len() as f64;
    }
    total / data.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub arch: ArchKind,
    pub activation: Activation,
    pub depth: usize,
    pub ranks: usize,
    pub trees: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub features: usize,
    pub samples: usize,
    pub instances: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Test hook: perturb the analytic gradient so the check must fail.
    pub corrupt: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            arch: ArchKind::Mlp1,
            activation: Activation::Tanh,
            depth: 3,
            ranks: 5,
            trees: 2,
            input_dim: 4,
            hidden_dim: 6,
            features: 8,
            samples: 4,
            instances: 10,
            step: 1e-5,
            tolerance: 1e-5,
            seed: 0,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub instances: usize,
    pub worst_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl std::fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "gradcheck {}: {} instances, worst relative error {:.3e} (tolerance {:.1e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.instances,
            self.worst_relative_error,
            self.tolerance
        )
    }
}

/// Relative error between the analytic backbone gradient and central finite
/// differences of the naive forest loss, for one random instance.
pub fn gradcheck_instance(cfg: &GradcheckConfig, instance: u64) -> Result<f64> {
    let arch = match cfg.arch {
        ArchKind::Linear => BackboneArch::linear(cfg.input_dim, cfg.features),
        ArchKind::Mlp1 => BackboneArch::mlp1(cfg.input_dim, cfg.hidden_dim, cfg.features, cfg.activation),
    };
    let master = seed::derive_seed(cfg.seed, 0x6C, instance);
    let mut rng = seed::rng(master, seed::STREAM_SYNTH, 0);
    let spec = OrdinalSpec::new(0.0, 1.0, cfg.ranks)?;
    let backbone = Backbone::init(arch, master)?;
    let mut forest = Forest::build(cfg.trees, cfg.depth, cfg.features, spec, master)?;
    for t in forest.trees_mut() {
        let tau = (0..t.leaves.as_slice().len()).map(|_| rng.random_range(0.02..0.98)).collect();
        t.leaves = LeafTable::from_rows(t.leaves.leaves(), t.leaves.thresholds(), tau)?;
    }
    let features = (0..cfg.samples)
        .map(|_| (0..cfg.input_dim).map(|_| rng.random_range(-1.5..1.5)).collect())
        .collect();
    let labels = (0..cfg.samples).map(|_| rng.random_range(0..cfg.ranks) as f64).collect();
    let data = Dataset::new(spec, features, labels)?;
    let model = CorfModel::new(backbone, forest)?;
    let indices: Vec<usize> = (0..data.len()).collect();
    let (_, mut analytic, _) = learning::batch_loss_and_grad(&model, &data, &indices, 1e-12)?;
    if cfg.corrupt {
        for (i, g) in analytic.iter_mut().enumerate() {
            *g = *g * 1.01 + if i % 2 == 0 { 1e-3 } else { -1e-3 };
        }
    }
    let numeric = fd_grad(
        |p| forest_loss_naive(p, &arch, &model.forest, &data, 1e-12),
        model.backbone.params(),
        cfg.step,
    )?;
    Ok(relative_error(&analytic, &numeric))
}

/// Runs `instances` random gradient checks. ReLU networks are rejected:
/// their kink makes finite differences unreliable.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if cfg.arch == ArchKind::Mlp1 && cfg.activation == Activation::Relu {
        return Err(CorfError::Config(
            "gradcheck does not support relu (non-differentiable at 0); use tanh".into(),
        ));
    }
    if cfg.instances == 0 || cfg.samples == 0 {
        return Err(CorfError::Config("gradcheck needs instances >= 1 and samples >= 1".into()));
    }
    let mut worst = 0.0f64;
    for i in 0..cfg.instances {
        worst = worst.max(gradcheck_instance(cfg, i as u64)?);
    }
    Ok(GradcheckReport {
        instances: cfg.instances,
        worst_relative_error: worst,
        tolerance: cfg.tolerance,
        passed: worst < cfg.tolerance,
    })
}
