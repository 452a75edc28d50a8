//! Feature function `f_θ`: a small dense network with hand-written
//! forward and backward passes.
//!
//! Parameters live in one flat vector. Layout, with weights stored
//! input-major (`w[i * out + j]` connects input `i` to output `j`):
//!
//! * `Linear`: `W[input × output]`, then `b[output]`.
//! * `Mlp1`: `W1[input × hidden]`, `b1[hidden]`, `W2[hidden × output]`, `b2[output]`.
//!
//! Outputs are raw affine values; the split sigmoid is applied by the tree.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CorfError, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArchKind {
    Linear,
    Mlp1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(CorfError::Config(format!("unknown activation '{other}'"))),
        }
    }
}

impl ArchKind {
    pub fn name(self) -> &'static str {
        match self {
            ArchKind::Linear => "linear",
            ArchKind::Mlp1 => "mlp1",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ArchKind::Linear),
            "mlp1" => Ok(ArchKind::Mlp1),
            other => Err(CorfError::Config(format!("unknown architecture '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneArch {
    pub kind: ArchKind,
    pub input_dim: usize,
    /// Ignored for `Linear`.
    pub hidden_dim: usize,
    pub output_dim: usize,
    /// Ignored for `Linear`.
    pub activation: Activation,
}

impl BackboneArch {
    pub fn linear(input_dim: usize, output_dim: usize) -> Self {
        Self {
            kind: ArchKind::Linear,
            input_dim,
            hidden_dim: 0,
            output_dim,
            activation: Activation::Tanh,
        }
    }

    pub fn mlp1(
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        activation: Activation,
    ) -> Self {
        Self {
            kind: ArchKind::Mlp1,
            input_dim,
            hidden_dim,
            output_dim,
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(CorfError::Config(
                "backbone input and output dims must be >= 1".into(),
            ));
        }
        if self.kind == ArchKind::Mlp1 && self.hidden_dim == 0 {
            return Err(CorfError::Config("mlp1 hidden dim must be >= 1".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            ArchKind::Linear => self.input_dim * self.output_dim + self.output_dim,
            ArchKind::Mlp1 => {
                self.input_dim * self.hidden_dim
                    + self.hidden_dim
                    + self.hidden_dim * self.output_dim
                    + self.output_dim
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    arch: BackboneArch,
    params: Vec<f64>,
}

/// Writes `out = b + xᵀW` for an input-major weight block.
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n_out = b.len();
    out.copy_from_slice(b);
    for (i, &xi) in x.iter().enumerate() {
        let row = &w[i * n_out..(i + 1) * n_out];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
}

/// Accumulates the weight and bias gradients of an affine block.
fn affine_backward(x: &[f64], grad_out: &[f64], gw: &mut [f64], gb: &mut [f64]) {
    let n_out = grad_out.len();
    for (i, &xi) in x.iter().enumerate() {
        let row = &mut gw[i * n_out..(i + 1) * n_out];
        for (g, &go) in row.iter_mut().zip(grad_out) {
            *g += xi * go;
        }
    }
    for (g, &go) in gb.iter_mut().zip(grad_out) {
        *g += go;
    }
}

/// Extra scale on the output layer's init range. Split nodes read raw
/// output units through an unscaled sigmoid, so this sets how sharp routing
/// is at the start of training.
pub const OUTPUT_INIT_GAIN: f64 = 2.0;

impl Backbone {
    /// Seeded initialization: weights uniform in `±sqrt(3 / fan_in)`, times
    /// [`OUTPUT_INIT_GAIN`] for the output layer; biases zero.
    pub fn init(arch: BackboneArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = seed::rng(seed, seed::STREAM_BACKBONE, 0);
        let mut params = vec![0.0; arch.param_count()];
        let mut fill = |block: &mut [f64], fan_in: usize, gain: f64| {
            let a = gain * (3.0 / fan_in as f64).sqrt();
            for w in block {
                *w = rng.random_range(-a..a);
            }
        };
        match arch.kind {
            ArchKind::Linear => {
                let nw = arch.input_dim * arch.output_dim;
                fill(&mut params[..nw], arch.input_dim, OUTPUT_INIT_GAIN);
            }
            ArchKind::Mlp1 => {
                let n1 = arch.input_dim * arch.hidden_dim;
                fill(&mut params[..n1], arch.input_dim, 1.0);
                let start = n1 + arch.hidden_dim;
                let n2 = arch.hidden_dim * arch.output_dim;
                fill(&mut params[start..start + n2], arch.hidden_dim, OUTPUT_INIT_GAIN);
            }
        }
        Ok(Self { arch, params })
    }

    pub fn from_params(arch: BackboneArch, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(CorfError::shape(
                "backbone parameter count",
                arch.param_count(),
                params.len(),
            ));
        }
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> &BackboneArch {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn output_dim(&self) -> usize {
        self.arch.output_dim
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim {
            return Err(CorfError::shape(
                "backbone input",
                self.arch.input_dim,
                x.len(),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let a = &self.arch;
        let mut out = vec![0.0; a.output_dim];
        match a.kind {
            ArchKind::Linear => {
                let nw = a.input_dim * a.output_dim;
                affine(&self.params[..nw], &self.params[nw..], x, &mut out);
            }
            ArchKind::Mlp1 => {
                let (w1, b1, w2, b2) = self.mlp_blocks();
                let mut hidden = vec![0.0; a.hidden_dim];
                affine(w1, b1, x, &mut hidden);
                for h in &mut hidden {
                    *h = a.activation.apply(*h);
                }
                affine(w2, b2, &hidden, &mut out);
            }
        }
        Ok(out)
    }

    fn mlp_blocks(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let a = &self.arch;
        let (w1, rest) = self.params.split_at(a.input_dim * a.hidden_dim);
        let (b1, rest) = rest.split_at(a.hidden_dim);
        let (w2, b2) = rest.split_at(a.hidden_dim * a.output_dim);
        (w1, b1, w2, b2)
    }

    /// `dLoss/dθ` for one sample given upstream `dLoss/df`.
    pub fn backward(&self, x: &[f64], grad_f: &[f64]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.params.len()];
        self.backward_accumulate(x, grad_f, &mut grad)?;
        Ok(grad)
    }

    /// Adds this sample's parameter gradient into `grad`.
    pub fn backward_accumulate(&self, x: &[f64], grad_f: &[f64], grad: &mut [f64]) -> Result<()> {
        self.check_input(x)?;
        let a = &self.arch;
        if grad_f.len() != a.output_dim {
            return Err(CorfError::shape("upstream gradient", a.output_dim, grad_f.len()));
        }
        if grad.len() != self.params.len() {
            return Err(CorfError::shape("gradient buffer", self.params.len(), grad.len()));
        }
        match a.kind {
            ArchKind::Linear => {
                let nw = a.input_dim * a.output_dim;
                let (gw, gb) = grad.split_at_mut(nw);
                affine_backward(x, grad_f, gw, gb);
            }
            ArchKind::Mlp1 => {
                let (w1, b1, w2, _) = self.mlp_blocks();
                let mut pre = vec![0.0; a.hidden_dim];
                affine(w1, b1, x, &mut pre);
                let hidden: Vec<f64> = pre.iter().map(|&z| a.activation.apply(z)).collect();

                let (g1, rest) = grad.split_at_mut(a.input_dim * a.hidden_dim);
                let (gb1, rest) = rest.split_at_mut(a.hidden_dim);
                let (g2, gb2) = rest.split_at_mut(a.hidden_dim * a.output_dim);
                affine_backward(&hidden, grad_f, g2, gb2);

                let mut grad_hidden = vec![0.0; a.hidden_dim];
                for (h, gh) in grad_hidden.iter_mut().enumerate() {
                    let row = &w2[h * a.output_dim..(h + 1) * a.output_dim];
                    let back: f64 = row.iter().zip(grad_f).map(|(w, g)| w * g).sum();
                    *gh = back * a.activation.derivative(pre[h], hidden[h]);
                }
                affine_backward(x, &grad_hidden, g1, gb1);
            }
        }
        Ok(())
    }

    /// Plain gradient step `θ ← θ − lr·grad`.
    pub fn sgd_step(&mut self, grad: &[f64], lr: f64) -> Result<()> {
        check_step(&self.params, grad, lr)?;
        for (p, g) in self.params.iter_mut().zip(grad) {
            *p -= lr * g;
        }
        Ok(())
    }
}

fn check_step(params: &[f64], grad: &[f64], lr: f64) -> Result<()> {
    if grad.len() != params.len() {
        return Err(CorfError::shape("gradient", params.len(), grad.len()));
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(CorfError::Config(format!("learning rate must be >= 0, got {lr}")));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(CorfError::Numeric(format!(
            "non-finite gradient entry {} at parameter {i}",
            grad[i]
        )));
    }
    Ok(())
}

/// SGD with heavy-ball momentum: `v ← μv + grad; θ ← θ − lr·v`.
///
/// With `μ = 0` this is exactly [`Backbone::sgd_step`].
#[derive(Debug, Clone)]
pub struct MomentumSgd {
    momentum: f64,
    velocity: Vec<f64>,
}

impl MomentumSgd {
    pub fn new(momentum: f64, param_count: usize) -> Self {
        Self {
            momentum,
            velocity: vec![0.0; param_count],
        }
    }

    pub fn step(&mut self, backbone: &mut Backbone, grad: &[f64], lr: f64) -> Result<()> {
        if self.momentum == 0.0 {
            return backbone.sgd_step(grad, lr);
        }
        check_step(&backbone.params, grad, lr)?;
        for ((p, v), g) in backbone.params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v + g;
            *p -= lr * *v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn init_is_deterministic() {
        let arch = BackboneArch::mlp1(5, 7, 3, Activation::Tanh);
        let a = Backbone::init(arch, 11).unwrap();
        let b = Backbone::init(arch, 11).unwrap();
        assert_eq!(a.params(), b.params());
        let c = Backbone::init(arch, 12).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(BackboneArch::linear(4, 6).param_count(), 4 * 6 + 6);
        assert_eq!(
            BackboneArch::mlp1(4, 5, 6, Activation::Relu).param_count(),
            4 * 5 + 5 + 5 * 6 + 6
        );
        let b = Backbone::init(BackboneArch::mlp1(4, 5, 6, Activation::Relu), 0).unwrap();
        assert_eq!(b.params().len(), 61);
    }

    #[test]
    fn init_biases_zero() {
        let arch = BackboneArch::mlp1(3, 4, 2, Activation::Tanh);
        let b = Backbone::init(arch, 5).unwrap();
        assert!(b.params()[12..16].iter().all(|&v| v == 0.0));
        assert!(b.params()[24..].iter().all(|&v| v == 0.0));
        let bound = (3.0f64 / 3.0).sqrt();
        assert!(b.params()[..12].iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn rejects_zero_dims() {
        assert!(Backbone::init(BackboneArch::linear(0, 3), 0).is_err());
        assert!(Backbone::init(BackboneArch::mlp1(2, 0, 3, Activation::Tanh), 0).is_err());
    }

    #[test]
    fn identity_linear() {
        let mut params = vec![0.0; 3 * 3 + 3];
        for i in 0..3 {
            params[i * 3 + i] = 1.0;
        }
        let b = Backbone::from_params(BackboneArch::linear(3, 3), params).unwrap();
        assert_eq!(b.forward(&[0.5, -2.0, 7.0]).unwrap(), vec![0.5, -2.0, 7.0]);
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut params = vec![0.0; 2 * 3 + 3];
        params[6..].copy_from_slice(&[1.0, -2.0, 0.25]);
        let b = Backbone::from_params(BackboneArch::linear(2, 3), params).unwrap();
        for x in [[0.0, 0.0], [3.0, -9.0]] {
            assert_eq!(b.forward(&x).unwrap(), vec![1.0, -2.0, 0.25]);
        }
    }

    #[test]
    fn forward_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..20 {
            let arch = BackboneArch::mlp1(4, 6, 5, Activation::Tanh);
            let b = Backbone::init(arch, trial).unwrap();
            let x = random_vec(&mut rng, 4);
            let got = b.forward(&x).unwrap();
            let want = oracle::mlp_forward_naive(&arch, b.params(), &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
            let arch = BackboneArch::linear(4, 5);
            let b = Backbone::init(arch, trial).unwrap();
            let got = b.forward(&x).unwrap();
            let want = oracle::mlp_forward_naive(&arch, b.params(), &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_shape_error() {
        let b = Backbone::init(BackboneArch::linear(3, 2), 0).unwrap();
        assert!(matches!(b.forward(&[1.0]), Err(CorfError::Shape { .. })));
        assert!(matches!(
            b.backward(&[1.0, 2.0, 3.0], &[1.0]),
            Err(CorfError::Shape { .. })
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let b = Backbone::init(BackboneArch::mlp1(3, 4, 2, Activation::Tanh), 1).unwrap();
        let g = b.backward(&[0.3, -0.2, 0.9], &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_weight_gradient_is_outer_product() {
        let b = Backbone::init(BackboneArch::linear(3, 2), 1).unwrap();
        let x = [0.5, -1.5, 2.0];
        let gf = [0.25, -4.0];
        let g = b.backward(&x, &gf).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(g[i * 2 + j], x[i] * gf[j]);
            }
        }
        assert_eq!(&g[6..], &gf);
    }

    #[test]
    fn mlp_tanh_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..10 {
            let arch = BackboneArch::mlp1(3, 5, 4, Activation::Tanh);
            let b = Backbone::init(arch, trial).unwrap();
            let x = random_vec(&mut rng, 3);
            let upstream = random_vec(&mut rng, 4);
            let analytic = b.backward(&x, &upstream).unwrap();
            let numeric = oracle::fd_grad(
                |p| {
                    let bb = Backbone::from_params(arch, p.to_vec()).unwrap();
                    let f = bb.forward(&x).unwrap();
                    f.iter().zip(&upstream).map(|(a, b)| a * b).sum()
                },
                b.params(),
                1e-5,
            )
            .unwrap();
            let err = oracle::relative_error(&analytic, &numeric);
            assert!(err < 1e-6, "trial {trial}: rel err {err}");
        }
    }

    #[test]
    fn sgd_examples() {
        let arch = BackboneArch::linear(2, 2);
        let mut b = Backbone::init(arch, 4).unwrap();
        let before = b.params().to_vec();
        b.sgd_step(&[0.0; 6], 0.1).unwrap();
        assert_eq!(b.params(), &before[..]);

        let g = b.params().to_vec();
        b.sgd_step(&g, 1.0).unwrap();
        assert!(b.params().iter().all(|&v| v == 0.0));

        let grad: Vec<f64> = (0..6).map(|i| i as f64 * 0.5 - 1.0).collect();
        let mut half = Backbone::from_params(arch, before.clone()).unwrap();
        let mut full = Backbone::from_params(arch, before).unwrap();
        half.sgd_step(&grad, 0.25).unwrap();
        half.sgd_step(&grad, 0.25).unwrap();
        full.sgd_step(&grad, 0.5).unwrap();
        for (a, b) in half.params().iter().zip(full.params()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn sgd_rejects_non_finite() {
        let mut b = Backbone::init(BackboneArch::linear(1, 1), 0).unwrap();
        let before = b.params().to_vec();
        let err = b.sgd_step(&[f64::NAN, 0.0], 0.1).unwrap_err();
        assert!(matches!(err, CorfError::Numeric(_)));
        assert_eq!(b.params(), &before[..]);
    }

    #[test]
    fn momentum_zero_matches_plain_sgd() {
        let arch = BackboneArch::linear(2, 2);
        let mut a = Backbone::init(arch, 9).unwrap();
        let mut b = a.clone();
        let mut opt = MomentumSgd::new(0.0, 6);
        let grad = [0.1, -0.2, 0.3, 0.0, 1.0, -1.0];
        for _ in 0..3 {
            opt.step(&mut a, &grad, 0.01).unwrap();
            b.sgd_step(&grad, 0.01).unwrap();
        }
        assert_eq!(a.params(), b.params());

        let mut m = MomentumSgd::new(0.5, 6);
        let mut c = Backbone::from_params(arch, vec![0.0; 6]).unwrap();
        m.step(&mut c, &grad, 1.0).unwrap();
        m.step(&mut c, &grad, 1.0).unwrap();
        // v1 = g, v2 = 1.5 g  =>  θ = -2.5 g
        for (p, g) in c.params().iter().zip(&grad) {
            assert!((p + 2.5 * g).abs() < 1e-15);
        }
    }
}
