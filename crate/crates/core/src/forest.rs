//! An ensemble of ordinal trees sharing one feature vector.

use crate::error::{CorfError, Result};
use crate::learning;
use crate::ordinal::{OrdinalPrediction, OrdinalSpec, OrdinalTarget};
use crate::seed;
use crate::tree::{self, LeafTable, Routing, TreeTopology};

/// Initial value of every leaf entry.
pub const LEAF_INIT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalTree {
    pub topology: TreeTopology,
    pub leaves: LeafTable,
}

impl OrdinalTree {
    pub fn route(&self, f: &[f64]) -> Result<Routing> {
        self.topology.route(f)
    }

    pub fn predict(&self, f: &[f64]) -> Result<OrdinalPrediction> {
        tree::predict(&self.topology.route(f)?, &self.leaves)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    spec: OrdinalSpec,
    feature_dim: usize,
    trees: Vec<OrdinalTree>,
}

impl Forest {
    /// `trees` trees of depth `depth`. Tree `m` draws its index map from
    /// `(seed, m)`; every leaf entry starts at 1/2.
    pub fn build(
        trees: usize,
        depth: usize,
        feature_dim: usize,
        spec: OrdinalSpec,
        seed: u64,
    ) -> Result<Self> {
        if trees == 0 {
            return Err(CorfError::Config("forest needs at least one tree".into()));
        }
        let trees = (0..trees)
            .map(|m| {
                let topology =
                    TreeTopology::build(depth, feature_dim, seed::derive_seed(seed, seed::STREAM_TREE, m as u64))?;
                let leaves = LeafTable::filled(topology.leaf_count(), spec.thresholds(), LEAF_INIT);
                Ok(OrdinalTree { topology, leaves })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec,
            feature_dim,
            trees,
        })
    }

    pub fn from_trees(spec: OrdinalSpec, feature_dim: usize, trees: Vec<OrdinalTree>) -> Result<Self> {
        if trees.is_empty() {
            return Err(CorfError::Config("forest needs at least one tree".into()));
        }
        for t in &trees {
            if t.topology.feature_dim() != feature_dim {
                return Err(CorfError::shape("tree feature dim", feature_dim, t.topology.feature_dim()));
            }
            if t.leaves.thresholds() != spec.thresholds() {
                return Err(CorfError::shape("leaf width", spec.thresholds(), t.leaves.thresholds()));
            }
            if t.leaves.leaves() != t.topology.leaf_count() {
                return Err(CorfError::shape("leaf rows", t.topology.leaf_count(), t.leaves.leaves()));
            }
        }
        Ok(Self {
            spec,
            feature_dim,
            trees,
        })
    }

    pub fn spec(&self) -> &OrdinalSpec {
        &self.spec
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn trees(&self) -> &[OrdinalTree] {
        &self.trees
    }

    pub fn trees_mut(&mut self) -> &mut [OrdinalTree] {
        &mut self.trees
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.trees[0].topology.depth()
    }

    /// Elementwise mean of the tree predictions.
    pub fn predict(&self, f: &[f64]) -> Result<OrdinalPrediction> {
        if f.len() != self.feature_dim {
            return Err(CorfError::shape("feature vector", self.feature_dim, f.len()));
        }
        let per_tree = self
            .trees
            .iter()
            .map(|t| t.predict(f))
            .collect::<Result<Vec<_>>>()?;
        Ok(average_predictions(&per_tree))
    }
}

pub fn average_predictions(per_tree: &[OrdinalPrediction]) -> OrdinalPrediction {
    let width = per_tree[0].len();
    let m = per_tree.len() as f64;
    let mut g = vec![0.0; width];
    for p in per_tree {
        for (acc, v) in g.iter_mut().zip(p.as_slice()) {
            *acc += v;
        }
    }
    for v in &mut g {
        *v = (*v / m).clamp(0.0, 1.0);
    }
    OrdinalPrediction::from_vec_unchecked(g)
}

/// Training loss: mean of the per-tree losses (not the loss of the mean prediction).
pub fn forest_loss(per_tree: &[OrdinalPrediction], target: &OrdinalTarget, eps: f64) -> f64 {
    let total: f64 = per_tree.iter().map(|g| learning::loss(g, target, eps)).sum();
    total / per_tree.len() as f64
}
