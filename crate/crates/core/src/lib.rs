//! Convolutional ordinal regression forests at desk scale.
//!
//! An ordinal label with `K` ranks is rewritten as `K - 1` binary
//! "greater than rank `k`" questions. A forest of soft decision trees sits on
//! top of a small feature network: each split node routes a sample left with
//! probability `σ(f[γ(n)])`, and each leaf stores one probability per
//! threshold. The forest is trained by alternating gradient steps on the
//! feature network with closed-form leaf updates.
//!
//! ```
//! use corf::{BackboneArch, Activation, SynthConfig, TrainConfig, train};
//!
//! let data = SynthConfig { samples: 200, ranks: 5, input_dim: 4, ..Default::default() }
//!     .generate()
//!     .unwrap();
//! let config = TrainConfig { trees: 2, depth: 3, features: 8, epochs: 2, lr: 0.05, ..Default::default() };
//! let arch = BackboneArch::mlp1(4, 8, 8, Activation::Tanh);
//! let out = train(&data, None, arch, &config).unwrap();
//! let rank = out.model.predict_rank_index(data.features(0)).unwrap();
//! assert!(rank < 5);
//! ```

pub mod backbone;
pub mod baseline;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod forest;
pub mod learning;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod ordinal;
pub mod seed;
pub mod tree;

pub use backbone::{Activation, ArchKind, Backbone, BackboneArch};
pub use checkpoint::Checkpoint;
pub use data::{Dataset, SynthConfig};
pub use error::{CorfError, Result};
pub use forest::Forest;
pub use learning::{train, TrainConfig};
pub use metrics::EvalReport;
pub use model::CorfModel;
pub use ordinal::{OrdinalPrediction, OrdinalSpec, OrdinalTarget};
pub use tree::{LeafTable, TreeTopology};

// The guide's code blocks compile and run as doc-tests.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/ordinal-labels.md")]
    pub mod ordinal_labels {}
    #[doc = include_str!("../../../book/src/soft-routing.md")]
    pub mod soft_routing {}
    #[doc = include_str!("../../../book/src/split-gradients.md")]
    pub mod split_gradients {}
    #[doc = include_str!("../../../book/src/leaf-updates.md")]
    pub mod leaf_updates {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    pub mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
