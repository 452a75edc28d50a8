//! Versioned model checkpoints.
//!
//! Layout: an ASCII header of `key=value` lines opened by
//! `CORF-CHECKPOINT <version>` and closed by `END-HEADER`, followed by
//! little-endian binary sections:
//!
//! ```text
//! u64 n_params, f64 × n_params               backbone parameters
//! per tree:
//!   u64 n_splits, u64 × n_splits             index map γ
//!   u64 n_entries, f64 × n_entries           leaf table, row-major
//! ```
//!
//! Header floats use shortest round-trip formatting, so load followed by
//! save reproduces the original bytes.

use std::io::Write;
use std::path::Path;

use crate::backbone::{Activation, ArchKind, Backbone, BackboneArch};
use crate::error::{CorfError, Result};
use crate::forest::{Forest, OrdinalTree};
use crate::learning::TrainConfig;
use crate::model::CorfModel;
use crate::ordinal::OrdinalSpec;
use crate::tree::{LeafTable, TreeTopology};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "CORF-CHECKPOINT";
const END_HEADER: &str = "END-HEADER";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: CorfModel,
    /// Configuration the model was trained with; `config.seed` is the master seed.
    pub config: TrainConfig,
    /// Completed training epochs.
    pub epoch: usize,
}

fn bad(msg: impl Into<String>) -> CorfError {
    CorfError::Checkpoint(msg.into())
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| CorfError::Config(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(CorfError::io(path, e));
    }
    Ok(())
}

struct Header {
    entries: Vec<(String, String)>,
}

impl Header {
    fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| bad(format!("missing header key '{key}'")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| bad(format!("header key '{key}': cannot parse '{raw}'")))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(bad("truncated binary section"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self, limit: usize) -> Result<usize> {
        let n = self.u64()?;
        if n > limit as u64 {
            return Err(bad(format!("section length {n} exceeds expected {limit}")));
        }
        Ok(n as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let spec = self.model.spec();
        let arch = self.model.backbone.arch();
        let c = &self.config;
        let mut header = format!("{MAGIC} {FORMAT_VERSION}\n");
        let mut kv = |k: &str, v: String| {
            header.push_str(k);
            header.push('=');
            header.push_str(&v);
            header.push('\n');
        };
        kv("r1", format!("{:?}", spec.r1()));
        kv("eta", format!("{:?}", spec.eta()));
        kv("ranks", spec.ranks().to_string());
        kv("arch", arch.kind.name().into());
        kv("input_dim", arch.input_dim.to_string());
        kv("hidden_dim", arch.hidden_dim.to_string());
        kv("output_dim", arch.output_dim.to_string());
        kv("activation", arch.activation.name().into());
        kv("trees", self.model.forest.len().to_string());
        kv("depth", self.model.forest.depth().to_string());
        kv("features", self.model.forest.feature_dim().to_string());
        kv("epoch", self.epoch.to_string());
        kv("seed", c.seed.to_string());
        kv("n_theta", c.n_theta.to_string());
        kv("n_tau", c.n_tau.to_string());
        kv("lr", format!("{:?}", c.lr));
        kv("lr_decay_factor", format!("{:?}", c.lr_decay_factor));
        kv("lr_decay_period", c.lr_decay_period.to_string());
        kv("epochs", c.epochs.to_string());
        kv("batch_size", c.batch_size.to_string());
        kv("momentum", format!("{:?}", c.momentum));
        kv("eps", format!("{:?}", c.eps));
        kv("early_stop_patience", c.early_stop_patience.to_string());
        header.push_str(END_HEADER);
        header.push('\n');

        let mut out = header.into_bytes();
        let params = self.model.backbone.params();
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        for t in self.model.forest.trees() {
            let gamma = t.topology.gamma();
            out.extend_from_slice(&(gamma.len() as u64).to_le_bytes());
            for &g in gamma {
                out.extend_from_slice(&(g as u64).to_le_bytes());
            }
            let tau = t.leaves.as_slice();
            out.extend_from_slice(&(tau.len() as u64).to_le_bytes());
            for v in tau {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let marker = format!("\n{END_HEADER}\n");
        let split = bytes
            .windows(marker.len())
            .position(|w| w == marker.as_bytes())
            .ok_or_else(|| bad("missing END-HEADER"))?;
        let text = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("header is not UTF-8"))?;
        let mut lines = text.lines();
        let first = lines.next().unwrap_or_default();
        let version = first
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| bad("not a CORF checkpoint"))?;
        if version != FORMAT_VERSION.to_string() {
            return Err(bad(format!("unsupported format version '{version}'")));
        }
        let entries = lines
            .map(|l| {
                l.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| bad(format!("malformed header line '{l}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        let h = Header { entries };

        let spec = OrdinalSpec::new(h.parse("r1")?, h.parse("eta")?, h.parse("ranks")?)?;
        let arch = BackboneArch {
            kind: ArchKind::parse(h.get("arch")?)?,
            input_dim: h.parse("input_dim")?,
            hidden_dim: h.parse("hidden_dim")?,
            output_dim: h.parse("output_dim")?,
            activation: Activation::parse(h.get("activation")?)?,
        };
        let config = TrainConfig {
            trees: h.parse("trees")?,
            depth: h.parse("depth")?,
            features: h.parse("features")?,
            n_theta: h.parse("n_theta")?,
            n_tau: h.parse("n_tau")?,
            lr: h.parse("lr")?,
            lr_decay_factor: h.parse("lr_decay_factor")?,
            lr_decay_period: h.parse("lr_decay_period")?,
            epochs: h.parse("epochs")?,
            batch_size: h.parse("batch_size")?,
            momentum: h.parse("momentum")?,
            eps: h.parse("eps")?,
            seed: h.parse("seed")?,
            early_stop_patience: h.parse("early_stop_patience")?,
        };
        let epoch: usize = h.parse("epoch")?;
        if !(2..=30).contains(&config.depth) || config.trees == 0 {
            return Err(bad("invalid forest shape in header"));
        }

        let mut r = Reader {
            bytes,
            pos: split + marker.len(),
        };
        let n_params = r.len(arch.param_count())?;
        let backbone = Backbone::from_params(arch, r.f64s(n_params)?)?;
        let splits = crate::tree::split_count(config.depth);
        let leaves = splits + 1;
        let mut trees = Vec::with_capacity(config.trees);
        for _ in 0..config.trees {
            let n = r.len(splits)?;
            let gamma = (0..n).map(|_| r.u64().map(|g| g as usize)).collect::<Result<Vec<_>>>()?;
            let topology = TreeTopology::from_gamma(config.depth, config.features, gamma)?;
            let n = r.len(leaves * spec.thresholds())?;
            let table = LeafTable::from_rows(leaves, spec.thresholds(), r.f64s(n)?)?;
            trees.push(OrdinalTree {
                topology,
                leaves: table,
            });
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes after last section"));
        }
        let forest = Forest::from_trees(spec, config.features, trees)?;
        let model = CorfModel::new(backbone, forest)?;
        Ok(Self {
            model,
            config,
            epoch,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| CorfError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
