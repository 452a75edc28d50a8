//! A single differentiable ordinal regression tree.
//!
//! Nodes use an implicit breadth-first layout: split nodes are `0..D`, the
//! children of node `n` are `2n + 1` (left) and `2n + 2` (right), and leaf
//! `l` is node `D + l`. Split `n` sends a sample left with probability
//! `s_n = σ(f[γ(n)])`; a leaf's routing probability is the product of the
//! branch probabilities along its path.

use rand::seq::index;
use rand::Rng;

use crate::error::{CorfError, Result};
use crate::ordinal::OrdinalPrediction;
use crate::seed;

/// Split activations are kept inside `[SIGMOID_FLOOR, 1 - SIGMOID_FLOOR]`.
pub const SIGMOID_FLOOR: f64 = 1e-12;

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn split_activation(z: f64) -> f64 {
    sigmoid(z).clamp(SIGMOID_FLOOR, 1.0 - SIGMOID_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeTopology {
    depth: usize,
    feature_dim: usize,
    gamma: Vec<usize>,
}

impl TreeTopology {
    /// Full binary tree of depth `depth` with a random split-to-feature map.
    ///
    /// Features are drawn without replacement when `feature_dim` covers
    /// every split node, with replacement otherwise.
    pub fn build(depth: usize, feature_dim: usize, seed: u64) -> Result<Self> {
        if depth < 2 {
            return Err(CorfError::Config(format!("tree depth must be >= 2, got {depth}")));
        }
        if depth > 30 {
            return Err(CorfError::Config(format!("tree depth {depth} too large")));
        }
        if feature_dim == 0 {
            return Err(CorfError::Config("feature dimension must be >= 1".into()));
        }
        let splits = split_count(depth);
        let mut rng = seed::rng(seed, seed::STREAM_TREE, 0);
        let gamma = if feature_dim >= splits {
            index::sample(&mut rng, feature_dim, splits).into_vec()
        } else {
            (0..splits).map(|_| rng.random_range(0..feature_dim)).collect()
        };
        Ok(Self {
            depth,
            feature_dim,
            gamma,
        })
    }

    pub fn from_gamma(depth: usize, feature_dim: usize, gamma: Vec<usize>) -> Result<Self> {
        if !(2..=30).contains(&depth) {
            return Err(CorfError::Config(format!("invalid tree depth {depth}")));
        }
        if gamma.len() != split_count(depth) {
            return Err(CorfError::shape("gamma length", split_count(depth), gamma.len()));
        }
        if let Some(&bad) = gamma.iter().find(|&&g| g >= feature_dim) {
            return Err(CorfError::Config(format!(
                "gamma entry {bad} outside feature range 0..{feature_dim}"
            )));
        }
        Ok(Self {
            depth,
            feature_dim,
            gamma,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn split_count(&self) -> usize {
        self.gamma.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.gamma.len() + 1
    }

    pub fn gamma(&self) -> &[usize] {
        &self.gamma
    }

    pub fn route(&self, f: &[f64]) -> Result<Routing> {
        if f.len() != self.feature_dim {
            return Err(CorfError::shape("feature vector", self.feature_dim, f.len()));
        }
        let splits = self.split_count();
        let mut split = Vec::with_capacity(splits);
        for &g in &self.gamma {
            let z = f[g];
            if !z.is_finite() {
                return Err(CorfError::Numeric(format!("non-finite feature f[{g}] = {z}")));
            }
            split.push(split_activation(z));
        }
        let mut mass = vec![0.0; 2 * splits + 1];
        mass[0] = 1.0;
        for n in 0..splits {
            let s = split[n];
            mass[2 * n + 1] = mass[n] * s;
            mass[2 * n + 2] = mass[n] * (1.0 - s);
        }
        mass.drain(..splits);
        Ok(Routing { leaf: mass, split })
    }
}

/// `2^(depth-1) - 1`.
pub fn split_count(depth: usize) -> usize {
    (1usize << (depth - 1)) - 1
}

/// `2^(depth-1)`.
pub fn leaf_count(depth: usize) -> usize {
    1usize << (depth - 1)
}

/// Leaf probabilities and the cached split activations that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Routing {
    leaf: Vec<f64>,
    split: Vec<f64>,
}

impl Routing {
    /// Routing with explicit leaf probabilities and no split nodes. Used for
    /// degenerate single-leaf caches and synthetic leaf-update instances.
    pub fn from_leaf_probabilities(leaf: Vec<f64>) -> Self {
        Self {
            leaf,
            split: Vec::new(),
        }
    }

    pub fn leaf(&self) -> &[f64] {
        &self.leaf
    }

    /// `s_n`, the left-branch probability of every split node.
    pub fn split(&self) -> &[f64] {
        &self.split
    }
}

/// Per-leaf ordinal distributions `τ_l`, stored row-major `[leaf][threshold]`.
///
/// Only the `c = 1` channel is stored; the `c = 2` channel is `1 - τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafTable {
    leaves: usize,
    thresholds: usize,
    tau: Vec<f64>,
}

impl LeafTable {
    pub fn filled(leaves: usize, thresholds: usize, value: f64) -> Self {
        assert!((0.0..=1.0).contains(&value));
        Self {
            leaves,
            thresholds,
            tau: vec![value; leaves * thresholds],
        }
    }

    pub fn from_rows(leaves: usize, thresholds: usize, tau: Vec<f64>) -> Result<Self> {
        if tau.len() != leaves * thresholds {
            return Err(CorfError::shape("leaf table", leaves * thresholds, tau.len()));
        }
        if let Some(bad) = tau.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CorfError::Numeric(format!("leaf entry {bad} outside [0, 1]")));
        }
        Ok(Self {
            leaves,
            thresholds,
            tau,
        })
    }

    pub fn leaves(&self) -> usize {
        self.leaves
    }

    pub fn thresholds(&self) -> usize {
        self.thresholds
    }

    pub fn get(&self, leaf: usize, k: usize) -> f64 {
        self.tau[leaf * self.thresholds + k]
    }

    /// Channel value `τ^{(k,c)}` with `c ∈ {0, 1}` (`0` is the stored channel).
    pub fn channel(&self, leaf: usize, k: usize, c: usize) -> f64 {
        let t = self.get(leaf, k);
        if c == 0 {
            t
        } else {
            1.0 - t
        }
    }

    pub fn row(&self, leaf: usize) -> &[f64] {
        &self.tau[leaf * self.thresholds..(leaf + 1) * self.thresholds]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.tau
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.tau
    }

    /// Fraction of leaf rows that are non-increasing in `k`.
    pub fn monotone_fraction(&self) -> f64 {
        if self.leaves == 0 {
            return 1.0;
        }
        let ok = (0..self.leaves)
            .filter(|&l| self.row(l).windows(2).all(|w| w[0] >= w[1]))
            .count();
        ok as f64 / self.leaves as f64
    }
}

fn check_leaves(routing: &Routing, leaves: &LeafTable) -> Result<()> {
    if routing.leaf.len() != leaves.leaves {
        return Err(CorfError::shape("leaf count", leaves.leaves, routing.leaf.len()));
    }
    Ok(())
}

/// Mixture prediction `g[k] = Σ_l p[l]·τ_l[k]`.
pub fn predict(routing: &Routing, leaves: &LeafTable) -> Result<OrdinalPrediction> {
    check_leaves(routing, leaves)?;
    let mut g = vec![0.0; leaves.thresholds];
    for (l, &p) in routing.leaf.iter().enumerate() {
        for (gk, &t) in g.iter_mut().zip(leaves.row(l)) {
            *gk += p * t;
        }
    }
    for v in &mut g {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(OrdinalPrediction::from_vec_unchecked(g))
}

/// Subtree sums `g_k^c(x; T_n) = Σ_{l under n} p[l]·τ_l^{(k,c)}` for every node.
///
/// Built bottom-up, so `parent = left + right` holds exactly.
#[derive(Debug, Clone)]
pub struct SubtreePartials {
    splits: usize,
    thresholds: usize,
    // [node][k][c]
    mass: Vec<f64>,
}

impl SubtreePartials {
    pub fn compute(routing: &Routing, leaves: &LeafTable) -> Result<Self> {
        check_leaves(routing, leaves)?;
        let splits = routing.leaf.len() - 1;
        let kc = leaves.thresholds * 2;
        let mut mass = vec![0.0; (2 * splits + 1) * kc];
        for (l, &p) in routing.leaf.iter().enumerate() {
            let base = (splits + l) * kc;
            for (k, &t) in leaves.row(l).iter().enumerate() {
                mass[base + 2 * k] = p * t;
                mass[base + 2 * k + 1] = p * (1.0 - t);
            }
        }
        for n in (0..splits).rev() {
            let (head, tail) = mass.split_at_mut((2 * n + 1) * kc);
            let parent = &mut head[n * kc..(n + 1) * kc];
            let left = &tail[..kc];
            let right = &tail[kc..2 * kc];
            for ((p, l), r) in parent.iter_mut().zip(left).zip(right) {
                *p = l + r;
            }
        }
        Ok(Self {
            splits,
            thresholds: leaves.thresholds,
            mass,
        })
    }

    pub fn split_count(&self) -> usize {
        self.splits
    }

    pub fn thresholds(&self) -> usize {
        self.thresholds
    }

    /// Sum over the subtree rooted at `node` (any node, split or leaf).
    pub fn node(&self, node: usize, k: usize, c: usize) -> f64 {
        self.mass[(node * self.thresholds + k) * 2 + c]
    }

    pub fn left(&self, split: usize, k: usize, c: usize) -> f64 {
        self.node(2 * split + 1, k, c)
    }

    pub fn right(&self, split: usize, k: usize, c: usize) -> f64 {
        self.node(2 * split + 2, k, c)
    }

    /// Whole-tree value `g_k^c(x; T)`.
    pub fn total(&self, k: usize, c: usize) -> f64 {
        self.node(0, k, c)
    }
}
