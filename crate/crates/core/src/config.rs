//! Flat `key=value` run configuration shared by every CLI command.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected. Command-line flags are applied on top of file values.

use std::path::Path;

use crate::backbone::{Activation, ArchKind, BackboneArch};
use crate::data::{SynthConfig, LABEL_COLUMN};
use crate::error::{CorfError, Result};
use crate::learning::TrainConfig;
use crate::ordinal::OrdinalSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub r1: f64,
    pub eta: f64,
    pub ranks: usize,

    pub arch: ArchKind,
    /// Taken from the dataset when unset.
    pub input_dim: Option<usize>,
    pub hidden_dim: usize,
    pub activation: Activation,

    pub train: TrainConfig,

    pub samples: usize,
    pub noise_sd: f64,

    pub label_column: String,
    pub cs_levels: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            r1: 1.0,
            eta: 1.0,
            ranks: 10,
            arch: ArchKind::Mlp1,
            input_dim: None,
            hidden_dim: 64,
            activation: Activation::Tanh,
            train: TrainConfig::default(),
            samples: 2000,
            noise_sd: 0.0,
            label_column: LABEL_COLUMN.to_string(),
            cs_levels: vec![5],
        }
    }
}

/// Every key accepted in a config file or via `--set`.
pub const KEYS: &[&str] = &[
    "r1",
    "eta",
    "ranks",
    "arch",
    "input_dim",
    "hidden_dim",
    "activation",
    "trees",
    "depth",
    "features",
    "n_theta",
    "n_tau",
    "lr",
    "lr_decay_factor",
    "lr_decay_period",
    "epochs",
    "batch_size",
    "momentum",
    "eps",
    "seed",
    "early_stop_patience",
    "samples",
    "noise_sd",
    "label_column",
    "cs_levels",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| CorfError::Config(format!("{key}: cannot parse '{value}'")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let t = &mut self.train;
        match key.trim() {
            "r1" => self.r1 = parse(key, value)?,
            "eta" => self.eta = parse(key, value)?,
            "ranks" => self.ranks = parse(key, value)?,
            "arch" => self.arch = ArchKind::parse(value)?,
            "input_dim" => self.input_dim = Some(parse(key, value)?),
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "activation" => self.activation = Activation::parse(value)?,
            "trees" => t.trees = parse(key, value)?,
            "depth" => t.depth = parse(key, value)?,
            "features" => t.features = parse(key, value)?,
            "n_theta" => t.n_theta = parse(key, value)?,
            "n_tau" => t.n_tau = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "lr_decay_factor" => t.lr_decay_factor = parse(key, value)?,
            "lr_decay_period" => t.lr_decay_period = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "momentum" => t.momentum = parse(key, value)?,
            "eps" => t.eps = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "early_stop_patience" => t.early_stop_patience = parse(key, value)?,
            "samples" => self.samples = parse(key, value)?,
            "noise_sd" => self.noise_sd = parse(key, value)?,
            "label_column" => self.label_column = value.to_string(),
            "cs_levels" => {
                self.cs_levels = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            other => return Err(CorfError::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CorfError::Config(format!("line {}: expected key=value, got '{line}'", i + 1))
            })?;
            self.set(k, v)
                .map_err(|e| CorfError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CorfError::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn spec(&self) -> Result<OrdinalSpec> {
        OrdinalSpec::new(self.r1, self.eta, self.ranks)
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            samples: self.samples,
            ranks: self.ranks,
            input_dim: self.input_dim.unwrap_or(8),
            noise_sd: self.noise_sd,
            r1: self.r1,
            eta: self.eta,
            seed: self.train.seed,
        }
    }

    /// Backbone architecture for data with `data_dim` features.
    pub fn arch(&self, data_dim: usize) -> Result<BackboneArch> {
        if let Some(d) = self.input_dim {
            if d != data_dim {
                return Err(CorfError::Config(format!(
                    "input_dim={d} but the dataset has {data_dim} feature columns"
                )));
            }
        }
        let arch = match self.arch {
            ArchKind::Linear => BackboneArch::linear(data_dim, self.train.features),
            ArchKind::Mlp1 => BackboneArch::mlp1(data_dim, self.hidden_dim, self.train.features, self.activation),
        };
        arch.validate()?;
        Ok(arch)
    }
}
