//! Independent per-threshold logistic heads on the same backbone.
//!
//! Each threshold `k` gets its own `g_k = σ(w_k · f + b_k)` trained with
//! binary cross entropy; nothing couples the thresholds. Used as the
//! comparison point for the forest under a matched backbone and budget.

use rand::Rng;

use crate::backbone::{Backbone, BackboneArch, MomentumSgd};
use crate::data::{self, Dataset};
use crate::error::{CorfError, Result};
use crate::learning::TrainConfig;
use crate::metrics;
use crate::ordinal::{OrdinalPrediction, OrdinalSpec};
use crate::seed;
use crate::tree::sigmoid;

#[derive(Debug, Clone, PartialEq)]
pub struct CorModel {
    pub spec: OrdinalSpec,
    pub backbone: Backbone,
    /// `[feature][threshold]`
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl CorModel {
    pub fn init(arch: BackboneArch, spec: OrdinalSpec, seed_value: u64) -> Result<Self> {
        let backbone = Backbone::init(arch, seed_value)?;
        let nk = spec.thresholds();
        let f = arch.output_dim;
        let a = (3.0 / f as f64).sqrt();
        let mut rng = seed::rng(seed_value, seed::STREAM_HEAD, 0);
        let weights = (0..f * nk).map(|_| rng.random_range(-a..a)).collect();
        Ok(Self {
            spec,
            backbone,
            weights,
            bias: vec![0.0; nk],
        })
    }

    fn head(&self, f: &[f64]) -> Vec<f64> {
        let nk = self.bias.len();
        let mut z = self.bias.clone();
        for (i, &fi) in f.iter().enumerate() {
            for (zk, w) in z.iter_mut().zip(&self.weights[i * nk..(i + 1) * nk]) {
                *zk += fi * w;
            }
        }
        z.into_iter().map(sigmoid).collect()
    }

    pub fn predict(&self, x: &[f64]) -> Result<OrdinalPrediction> {
        let f = self.backbone.forward(x)?;
        OrdinalPrediction::new(self.head(&f))
    }

    pub fn predict_rank_index(&self, x: &[f64]) -> Result<usize> {
        self.spec.decode_index(&self.predict(x)?)
    }

    /// Test MAE in rank indices.
    pub fn mae(&self, data: &Dataset) -> Result<f64> {
        let pred = (0..data.len())
            .map(|i| self.predict_rank_index(data.features(i)))
            .collect::<Result<Vec<_>>>()?;
        metrics::mae(&pred, data.rank_indices())
    }
}

/// SGD on backbone and heads with the batching and learning-rate schedule of
/// the forest trainer. Leaf-phase settings (`n_theta`, `n_tau`, forest shape)
/// are ignored.
pub fn train_cor(data_set: &Dataset, arch: BackboneArch, config: &TrainConfig) -> Result<CorModel> {
    config.validate()?;
    let mut model = CorModel::init(arch, *data_set.spec(), config.seed)?;
    let nk = model.bias.len();
    let nf = arch.output_dim;
    let mut opt_backbone = MomentumSgd::new(config.momentum, model.backbone.params().len());
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        for (b, batch) in data::batches(data_set.len(), config.batch_size, config.seed, epoch)
            .into_iter()
            .enumerate()
        {
            let scale = 1.0 / batch.len() as f64;
            let mut g_backbone = vec![0.0; model.backbone.params().len()];
            let mut g_w = vec![0.0; nf * nk];
            let mut g_b = vec![0.0; nk];
            for &i in &batch {
                let x = data_set.features(i);
                let d = data_set.target(i);
                let f = model.backbone.forward(x)?;
                let g = model.head(&f);
                let dz: Vec<f64> = g.iter().zip(d.as_slice()).map(|(gk, dk)| scale * (gk - dk)).collect();
                let mut df = vec![0.0; nf];
                for (fi, (dfi, &fv)) in df.iter_mut().zip(&f).enumerate() {
                    let row = &model.weights[fi * nk..(fi + 1) * nk];
                    *dfi = row.iter().zip(&dz).map(|(w, z)| w * z).sum();
                    for (gw, z) in g_w[fi * nk..(fi + 1) * nk].iter_mut().zip(&dz) {
                        *gw += fv * z;
                    }
                }
                for (gb, z) in g_b.iter_mut().zip(&dz) {
                    *gb += z;
                }
                model.backbone.backward_accumulate(x, &df, &mut g_backbone)?;
            }
            if g_w.iter().chain(&g_b).any(|v| !v.is_finite()) {
                return Err(CorfError::Numeric(format!(
                    "non-finite head gradient at epoch {} batch {b}",
                    epoch + 1
                )));
            }
            opt_backbone.step(&mut model.backbone, &g_backbone, lr)?;
            for (w, g) in model.weights.iter_mut().zip(&g_w) {
                *w -= lr * g;
            }
            for (bb, g) in model.bias.iter_mut().zip(&g_b) {
                *bb -= lr * g;
            }
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::Activation;
    use crate::data::SynthConfig;
    use crate::oracle;

    #[test]
    fn head_gradient_matches_finite_differences() {
        let spec = OrdinalSpec::new(0.0, 1.0, 4).unwrap();
        let arch = BackboneArch::mlp1(3, 4, 5, Activation::Tanh);
        let model = CorModel::init(arch, spec, 3).unwrap();
        let x = [0.2, -0.7, 1.1];
        let d = spec.encode(2.0).unwrap();
        let loss_of = |w: &[f64]| {
            let mut m = model.clone();
            m.weights.copy_from_slice(w);
            let g = m.head(&m.backbone.forward(&x).unwrap());
            oracle::loss_two_channel(&g, d.as_slice(), 1e-12)
        };
        let numeric = oracle::fd_grad(loss_of, &model.weights, 1e-6).unwrap();
        let f = model.backbone.forward(&x).unwrap();
        let g = model.head(&f);
        let analytic: Vec<f64> = (0..5)
            .flat_map(|i| (0..3).map(move |k| (i, k)))
            .map(|(i, k)| f[i] * (g[k] - d.get(k)))
            .collect();
        assert!(oracle::relative_error(&analytic, &numeric) < 1e-7);
    }

    #[test]
    fn training_reduces_mae() {
        let data = SynthConfig { samples: 300, ranks: 5, input_dim: 4, ..Default::default() }
            .generate()
            .unwrap();
        let arch = BackboneArch::mlp1(4, 16, 8, Activation::Tanh);
        let cfg = TrainConfig { features: 8, epochs: 10, lr: 0.1, batch_size: 16, seed: 2, ..Default::default() };
        let before = CorModel::init(arch, *data.spec(), 2).unwrap().mae(&data).unwrap();
        let after = train_cor(&data, arch, &cfg).unwrap();
        assert!(after.mae(&data).unwrap() < before);
        let again = train_cor(&data, arch, &cfg).unwrap();
        assert_eq!(after, again);
    }
}
