//! Ordinal label space: rank grid, threshold encoding and decoding.
//!
//! A label space with `K` ranks `r_1 < ... < r_K` spaced `eta` apart is
//! reduced to `K - 1` binary questions "is the label greater than `r_k`?".
//! A ground-truth label becomes a 0/1 vector of the form `1...10...0`, and a
//! soft prediction `g` (one probability per threshold) decodes back to
//! `r_1 + eta * #{k : g_k > 0.5}`.

use serde::{Deserialize, Serialize};

use crate::error::{CorfError, Result};

/// Relative tolerance (in units of `eta`) for accepting a label as on-grid.
const GRID_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrdinalSpec {
    r1: f64,
    eta: f64,
    ranks: usize,
}

impl OrdinalSpec {
    pub fn new(r1: f64, eta: f64, ranks: usize) -> Result<Self> {
        if !r1.is_finite() {
            return Err(CorfError::Config(format!("r1 must be finite, got {r1}")));
        }
        if !(eta.is_finite() && eta > 0.0) {
            return Err(CorfError::Config(format!("eta must be > 0, got {eta}")));
        }
        if ranks < 2 {
            return Err(CorfError::Config(format!(
                "number of ranks must be >= 2, got {ranks}"
            )));
        }
        Ok(Self { r1, eta, ranks })
    }

    pub fn r1(&self) -> f64 {
        self.r1
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Number of ranks `K`.
    pub fn ranks(&self) -> usize {
        self.ranks
    }

    /// Number of binary thresholds, `K - 1`.
    pub fn thresholds(&self) -> usize {
        self.ranks - 1
    }

    /// Value of the rank with 0-based index `index`.
    pub fn rank_value(&self, index: usize) -> f64 {
        self.r1 + index as f64 * self.eta
    }

    pub fn max_value(&self) -> f64 {
        self.rank_value(self.ranks - 1)
    }

    /// 0-based rank index of an on-grid label value.
    pub fn rank_index(&self, y: f64) -> Result<usize> {
        if !y.is_finite() {
            return Err(CorfError::InvalidLabel {
                value: y,
                reason: "not a finite number".into(),
            });
        }
        let steps = (y - self.r1) / self.eta;
        let nearest = steps.round();
        if (steps - nearest).abs() > GRID_TOLERANCE {
            return Err(CorfError::InvalidLabel {
                value: y,
                reason: format!(
                    "not on the rank grid r1={} + k*eta (eta={})",
                    self.r1, self.eta
                ),
            });
        }
        if nearest < 0.0 || nearest > (self.ranks - 1) as f64 {
            return Err(CorfError::InvalidLabel {
                value: y,
                reason: format!("outside [{}, {}]", self.r1, self.max_value()),
            });
        }
        Ok(nearest as usize)
    }

    pub fn encode(&self, y: f64) -> Result<OrdinalTarget> {
        let index = self.rank_index(y)?;
        Ok(OrdinalTarget::from_rank_index(index, self.thresholds()))
    }

    /// Number of thresholds the prediction exceeds; the decoded 0-based rank index.
    pub fn decode_index(&self, g: &OrdinalPrediction) -> Result<usize> {
        if g.len() != self.thresholds() {
            return Err(CorfError::shape(
                "prediction length",
                self.thresholds(),
                g.len(),
            ));
        }
        Ok(g.as_slice().iter().filter(|&&v| v > 0.5).count())
    }

    pub fn decode(&self, g: &OrdinalPrediction) -> Result<f64> {
        Ok(self.rank_value(self.decode_index(g)?))
    }
}

/// Ground-truth threshold vector `d`, with `d[k] = 1` iff the label exceeds `r_{k+1}`.
///
/// Entries are stored as `f64` (exactly 0.0 or 1.0) since every consumer
/// uses them as weights.
#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalTarget {
    bits: Vec<f64>,
    rank_index: usize,
}

impl OrdinalTarget {
    pub fn from_rank_index(rank_index: usize, thresholds: usize) -> Self {
        assert!(
            rank_index <= thresholds,
            "rank index {rank_index} outside 0..={thresholds}"
        );
        let bits = (0..thresholds)
            .map(|k| if k < rank_index { 1.0 } else { 0.0 })
            .collect();
        Self { bits, rank_index }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, k: usize) -> f64 {
        self.bits[k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.bits
    }

    pub fn rank_index(&self) -> usize {
        self.rank_index
    }

    /// Two-channel weights `(d^k, 1 - d^k)` per threshold.
    pub fn channel_weights(&self) -> Vec<[f64; 2]> {
        self.bits.iter().map(|&d| [d, 1.0 - d]).collect()
    }
}

/// Soft prediction `g`, one probability in `[0, 1]` per threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalPrediction(Vec<f64>);

impl OrdinalPrediction {
    pub fn new(g: Vec<f64>) -> Result<Self> {
        if let Some(bad) = g.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CorfError::Numeric(format!(
                "prediction entry {bad} outside [0, 1]"
            )));
        }
        Ok(Self(g))
    }

    /// Skips the range check; for values that are in `[0, 1]` by construction.
    pub(crate) fn from_vec_unchecked(g: Vec<f64>) -> Self {
        debug_assert!(g.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
        Self(g)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}
