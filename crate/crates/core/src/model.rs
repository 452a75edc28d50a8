//! Backbone plus forest: the trainable model.

use crate::backbone::{Backbone, BackboneArch};
use crate::error::{CorfError, Result};
use crate::forest::Forest;
use crate::learning::TrainConfig;
use crate::ordinal::{OrdinalPrediction, OrdinalSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct CorfModel {
    pub backbone: Backbone,
    pub forest: Forest,
}

impl CorfModel {
    /// Fresh model; the backbone output width must equal `config.features`.
    pub fn init(arch: BackboneArch, spec: OrdinalSpec, config: &TrainConfig) -> Result<Self> {
        if arch.output_dim != config.features {
            return Err(CorfError::Config(format!(
                "backbone output dim {} differs from forest feature count {}",
                arch.output_dim, config.features
            )));
        }
        let backbone = Backbone::init(arch, config.seed)?;
        let forest = Forest::build(config.trees, config.depth, config.features, spec, config.seed)?;
        Ok(Self { backbone, forest })
    }

    pub fn new(backbone: Backbone, forest: Forest) -> Result<Self> {
        if backbone.output_dim() != forest.feature_dim() {
            return Err(CorfError::shape(
                "forest feature dim",
                backbone.output_dim(),
                forest.feature_dim(),
            ));
        }
        Ok(Self { backbone, forest })
    }

    pub fn spec(&self) -> &OrdinalSpec {
        self.forest.spec()
    }

    /// Forest-averaged soft prediction for one input.
    pub fn predict(&self, x: &[f64]) -> Result<OrdinalPrediction> {
        self.forest.predict(&self.backbone.forward(x)?)
    }

    /// Decoded 0-based rank index.
    pub fn predict_rank_index(&self, x: &[f64]) -> Result<usize> {
        self.spec().decode_index(&self.predict(x)?)
    }
}
