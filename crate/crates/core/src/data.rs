//! Tabular datasets, deterministic batching and a synthetic ordinal generator.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{CorfError, Result};
use crate::ordinal::{OrdinalSpec, OrdinalTarget};
use crate::seed;

pub const LABEL_COLUMN: &str = "label";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    spec: OrdinalSpec,
    feature_dim: usize,
    features: Vec<Vec<f64>>,
    labels: Vec<f64>,
    ranks: Vec<usize>,
    feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(spec: OrdinalSpec, features: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        if features.is_empty() {
            return Err(CorfError::Empty("dataset has no samples"));
        }
        if features.len() != labels.len() {
            return Err(CorfError::shape("label count", features.len(), labels.len()));
        }
        let feature_dim = features[0].len();
        let mut ranks = Vec::with_capacity(labels.len());
        for (row, (x, &y)) in features.iter().zip(&labels).enumerate() {
            if x.len() != feature_dim {
                return Err(CorfError::Data {
                    row: row + 1,
                    message: format!("expected {feature_dim} features, found {}", x.len()),
                });
            }
            let r = spec.rank_index(y).map_err(|e| CorfError::Data {
                row: row + 1,
                message: e.to_string(),
            })?;
            ranks.push(r);
        }
        let feature_names = (0..feature_dim).map(|i| format!("x{i}")).collect();
        Ok(Self {
            spec,
            feature_dim,
            features,
            labels,
            ranks,
            feature_names,
        })
    }

    pub fn spec(&self) -> &OrdinalSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// 0-based rank indices of every label.
    pub fn rank_indices(&self) -> &[usize] {
        &self.ranks
    }

    pub fn target(&self, i: usize) -> OrdinalTarget {
        OrdinalTarget::from_rank_index(self.ranks[i], self.spec.thresholds())
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Subset by indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let features = indices.iter().map(|&i| self.features[i].clone()).collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let mut d = Self::new(self.spec, features, labels)?;
        d.feature_names = self.feature_names.clone();
        Ok(d)
    }

    /// Reads a headed, comma-separated file. Every column other than
    /// `label_column` is a feature, in file order.
    pub fn load_csv(path: impl AsRef<Path>, spec: OrdinalSpec, label_column: &str) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| CorfError::io(path, e))?;
        Self::read_csv(file, spec, label_column)
    }

    pub fn read_csv(reader: impl std::io::Read, spec: OrdinalSpec, label_column: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| CorfError::Data {
                row: 0,
                message: format!("unreadable header: {e}"),
            })?
            .clone();
        let label_idx = headers
            .iter()
            .position(|h| h.trim() == label_column)
            .ok_or_else(|| CorfError::Data {
                row: 0,
                message: format!("missing label column '{label_column}'"),
            })?;
        let feature_names: Vec<String> = headers
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != label_idx)
            .map(|(_, h)| h.trim().to_string())
            .collect();

        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let row = i + 1;
            let record = record.map_err(|e| CorfError::Data {
                row,
                message: e.to_string(),
            })?;
            if record.len() != headers.len() {
                return Err(CorfError::Data {
                    row,
                    message: format!("expected {} fields, found {}", headers.len(), record.len()),
                });
            }
            let mut x = Vec::with_capacity(feature_names.len());
            let mut y = 0.0;
            for (col, cell) in record.iter().enumerate() {
                let v: f64 = cell.trim().parse().map_err(|_| CorfError::Data {
                    row,
                    message: format!("column '{}': cannot parse '{cell}' as a number", &headers[col]),
                })?;
                if !v.is_finite() {
                    return Err(CorfError::Data {
                        row,
                        message: format!("column '{}': non-finite value", &headers[col]),
                    });
                }
                if col == label_idx {
                    y = v;
                } else {
                    x.push(v);
                }
            }
            spec.rank_index(y).map_err(|e| CorfError::Data {
                row,
                message: e.to_string(),
            })?;
            features.push(x);
            labels.push(y);
        }
        if features.is_empty() {
            return Err(CorfError::Empty("CSV file has no data rows"));
        }
        let mut d = Self::new(spec, features, labels)?;
        d.feature_names = feature_names;
        Ok(d)
    }

    /// Writes features then the label column. Floats use Rust's shortest
    /// round-trip formatting, so a reload is exact.
    pub fn write_csv(&self, writer: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let to_err = |e: csv::Error| CorfError::Data {
            row: 0,
            message: e.to_string(),
        };
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(LABEL_COLUMN);
        w.write_record(&header).map_err(to_err)?;
        for (x, y) in self.features.iter().zip(&self.labels) {
            let mut rec: Vec<String> = x.iter().map(|v| format!("{v:?}")).collect();
            rec.push(format!("{y:?}"));
            w.write_record(&rec).map_err(to_err)?;
        }
        w.flush().map_err(|e| CorfError::io("<csv>", e))?;
        Ok(())
    }
}

/// Shuffled mini-batches for one epoch; the last batch may be short.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be >= 1");
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng(seed, seed::STREAM_BATCH, epoch as u64);
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Synthetic ordinal data from a one-dimensional latent variable.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub samples: usize,
    pub ranks: usize,
    pub input_dim: usize,
    /// Standard deviation of the latent label noise and of the feature noise.
    pub noise_sd: f64,
    pub r1: f64,
    pub eta: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            samples: 2000,
            ranks: 10,
            input_dim: 8,
            noise_sd: 0.0,
            r1: 1.0,
            eta: 1.0,
            seed: 7,
        }
    }
}

/// Scale of the latent basis before embedding.
const EMBED_SCALE: f64 = 4.0;

impl SynthConfig {
    pub fn validate(&self) -> Result<OrdinalSpec> {
        if self.samples == 0 {
            return Err(CorfError::Config("synth samples must be >= 1".into()));
        }
        if self.input_dim == 0 {
            return Err(CorfError::Config("synth input_dim must be >= 1".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(CorfError::Config(format!("noise_sd must be >= 0, got {}", self.noise_sd)));
        }
        OrdinalSpec::new(self.r1, self.eta, self.ranks)
    }

    /// Generation manifest in `key=value` form (readable as a run config).
    pub fn manifest(&self) -> String {
        format!(
            "# synthetic dataset manifest\nsamples={}\nranks={}\ninput_dim={}\nnoise_sd={:?}\nr1={:?}\neta={:?}\nseed={}\n",
            self.samples, self.ranks, self.input_dim, self.noise_sd, self.r1, self.eta, self.seed
        )
    }

    /// Draws `u ~ U[0, 1)`, assigns rank `floor(clamp(u + noise) · K)` and
    /// embeds the centred basis `(u, u², sin 2πu)` through a fixed random
    /// linear map, adding feature noise with the same standard deviation.
    pub fn generate(&self) -> Result<Dataset> {
        Ok(self.generate_with_latent()?.0)
    }

    /// As [`generate`](Self::generate), also returning each sample's latent `u`.
    pub fn generate_with_latent(&self) -> Result<(Dataset, Vec<f64>)> {
        let spec = self.validate()?;
        let mut embed_rng = seed::rng(self.seed, seed::STREAM_SYNTH, 0);
        let embedding: Vec<[f64; 3]> = (0..self.input_dim)
            .map(|_| {
                [
                    embed_rng.random_range(-1.0..1.0),
                    embed_rng.random_range(-1.0..1.0),
                    embed_rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        let mut rng = seed::rng(self.seed, seed::STREAM_SYNTH, 1);
        let noise = Normal::new(0.0, self.noise_sd.max(f64::MIN_POSITIVE))
            .map_err(|e| CorfError::Config(e.to_string()))?;
        let top = 1.0 - f64::EPSILON / 2.0;
        let mut features = Vec::with_capacity(self.samples);
        let mut labels = Vec::with_capacity(self.samples);
        let mut latents = Vec::with_capacity(self.samples);
        for _ in 0..self.samples {
            let u: f64 = rng.random();
            latents.push(u);
            let latent_noise = if self.noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let v = (u + latent_noise).clamp(0.0, top);
            let rank = ((v * self.ranks as f64).floor() as usize).min(self.ranks - 1);
            let basis = [
                EMBED_SCALE * (u - 0.5),
                EMBED_SCALE * (u * u - 1.0 / 3.0),
                EMBED_SCALE * (2.0 * std::f64::consts::PI * u).sin(),
            ];
            let x = embedding
                .iter()
                .map(|row| {
                    let clean: f64 = row.iter().zip(&basis).map(|(a, b)| a * b).sum();
                    if self.noise_sd > 0.0 {
                        clean + noise.sample(&mut rng)
                    } else {
                        clean
                    }
                })
                .collect();
            features.push(x);
            labels.push(spec.rank_value(rank));
        }
        Ok((Dataset::new(spec, features, labels)?, latents))
    }
}
