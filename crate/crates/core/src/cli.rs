//! Command-line front end.
//!
//! Every command validates its configuration before touching the file
//! system, and every output file is written atomically.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::backbone::{Activation, ArchKind};
use crate::checkpoint::{write_atomic, Checkpoint};
use crate::config::RunConfig;
use crate::data::Dataset;
use crate::error::{CorfError, Result};
use crate::learning::{self, EpochRecord};
use crate::metrics::EvalReport;
use crate::model::CorfModel;
use crate::oracle::{self, GradcheckConfig};

#[derive(Debug, Parser)]
#[command(name = "corf", version, about = "Ordinal regression forests on a small backbone")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// key=value configuration file
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override a single config key; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Default)]
pub struct TrainOverrides {
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long)]
    pub ntau: Option<usize>,
    #[arg(long)]
    pub ntheta: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic ordinal dataset (CSV plus `<out>.manifest`)
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        ranks: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes the checkpoint and `<out>.log.csv`
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        overrides: TrainOverrides,
        #[arg(long = "train", value_name = "CSV")]
        train: PathBuf,
        #[arg(long = "val", value_name = "CSV")]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print an evaluation report as JSON
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_name = "CSV")]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the decoded rank and the full prediction vector per row
    Predict {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_name = "CSV")]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients with finite differences
    Gradcheck {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        ranks: Option<usize>,
        #[arg(long)]
        trees: Option<usize>,
        #[arg(long)]
        arch: Option<String>,
        #[arg(long)]
        activation: Option<String>,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Dump every leaf distribution as CSV
    Dumpleaves {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CorfError::Config(format!("--set expects key=value, got '{kv}'")))?;
        cfg.set(k, v)?;
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn apply_overrides(cfg: &mut RunConfig, o: &TrainOverrides) {
    let t = &mut cfg.train;
    let pairs = [
        (&mut t.trees, o.trees),
        (&mut t.depth, o.depth),
        (&mut t.features, o.features),
        (&mut t.n_tau, o.ntau),
        (&mut t.n_theta, o.ntheta),
        (&mut t.epochs, o.epochs),
        (&mut t.batch_size, o.batch),
    ];
    for (field, v) in pairs {
        if let Some(v) = v {
            *field = v;
        }
    }
    if let Some(lr) = o.lr {
        t.lr = lr;
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

/// Reads feature rows, ignoring `label_column` when present.
fn read_features(path: &Path, label_column: &str, expected_dim: usize) -> Result<Vec<Vec<f64>>> {
    let file = std::fs::File::open(path).map_err(|e| CorfError::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| CorfError::Data { row: 0, message: format!("unreadable header: {e}") })?
        .clone();
    let label_idx = headers.iter().position(|h| h.trim() == label_column);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| CorfError::Data { row, message: e.to_string() })?;
        let x = rec
            .iter()
            .enumerate()
            .filter(|&(c, _)| Some(c) != label_idx)
            .map(|(_, cell)| {
                cell.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| CorfError::Data { row, message: format!("cannot parse '{cell}' as a finite number") })
            })
            .collect::<Result<Vec<_>>>()?;
        if x.len() != expected_dim {
            return Err(CorfError::Data {
                row,
                message: format!("expected {expected_dim} feature columns, found {}", x.len()),
            });
        }
        rows.push(x);
    }
    if rows.is_empty() {
        return Err(CorfError::Empty("CSV file has no data rows"));
    }
    Ok(rows)
}

fn cmd_synth(cfg: &ConfigArgs, samples: Option<usize>, ranks: Option<usize>, out: &Path) -> Result<String> {
    let mut rc = run_config(cfg)?;
    if let Some(n) = samples {
        rc.samples = n;
    }
    if let Some(k) = ranks {
        rc.ranks = k;
    }
    let synth = rc.synth();
    let data = synth.generate()?;
    let bytes = csv_bytes(|b| data.write_csv(b))?;
    write_atomic(out, &bytes)?;
    write_atomic(&with_suffix(out, ".manifest"), synth.manifest().as_bytes())?;
    Ok(format!("wrote {} rows to {}", data.len(), out.display()))
}

fn cmd_train(rc: &RunConfig, train_csv: &Path, val_csv: Option<&Path>, out: &Path) -> Result<String> {
    rc.train.validate()?;
    let spec = rc.spec()?;
    let train_set = Dataset::load_csv(train_csv, spec, &rc.label_column)?;
    let val_set = val_csv
        .map(|p| Dataset::load_csv(p, spec, &rc.label_column))
        .transpose()?;
    let arch = rc.arch(train_set.feature_dim())?;
    let outcome = learning::train(&train_set, val_set.as_ref(), arch, &rc.train)?;
    let ck = Checkpoint { model: outcome.model, config: rc.train.clone(), epoch: outcome.epochs_run };
    let mut log = String::from(EpochRecord::CSV_HEADER);
    log.push('\n');
    for r in &outcome.log {
        log.push_str(&r.to_csv());
        log.push('\n');
    }
    ck.save(out)?;
    write_atomic(&with_suffix(out, ".log.csv"), log.as_bytes())?;
    let last = outcome.log.iter().rev().find(|r| r.phase == learning::Phase::Train);
    Ok(match last {
        Some(r) => format!(
            "trained {} epochs; final train loss {:.6}, MAE {:.4}; checkpoint {}",
            outcome.epochs_run,
            r.loss,
            r.mae,
            out.display()
        ),
        None => format!("checkpoint {}", out.display()),
    })
}

/// Decoded rank index of every row, through [`CorfModel::predict`].
fn predict_indices(model: &CorfModel, rows: impl Iterator<Item = Vec<f64>>) -> Result<Vec<usize>> {
    rows.map(|x| model.predict_rank_index(&x)).collect()
}

fn cmd_eval(rc: &RunConfig, checkpoint: &Path, data: &Path, out: Option<&Path>) -> Result<String> {
    let ck = Checkpoint::load(checkpoint)?;
    let model = &ck.model;
    let ds = Dataset::load_csv(data, *model.spec(), &rc.label_column)?;
    if ds.feature_dim() != model.backbone.arch().input_dim {
        return Err(CorfError::Data {
            row: 0,
            message: format!(
                "dataset has {} feature columns, checkpoint expects {}",
                ds.feature_dim(),
                model.backbone.arch().input_dim
            ),
        });
    }
    let pred = predict_indices(model, (0..ds.len()).map(|i| ds.features(i).to_vec()))?;
    let report = EvalReport::compute(&pred, ds.rank_indices(), model.spec().eta(), &rc.cs_levels)?;
    let json = report.to_json();
    if let Some(p) = out {
        write_atomic(p, format!("{json}\n").as_bytes())?;
    }
    Ok(json)
}

fn cmd_predict(rc: &RunConfig, checkpoint: &Path, data: &Path, out: &Path) -> Result<String> {
    let ck = Checkpoint::load(checkpoint)?;
    let model = &ck.model;
    let spec = model.spec();
    let rows = read_features(data, &rc.label_column, model.backbone.arch().input_dim)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["row".to_string(), "rank_index".into(), "rank".into()];
    header.extend((1..=spec.thresholds()).map(|k| format!("g{k}")));
    let csv_err = |e: csv::Error| CorfError::Data { row: 0, message: e.to_string() };
    w.write_record(&header).map_err(csv_err)?;
    for (i, x) in rows.iter().enumerate() {
        let g = model.predict(x)?;
        let idx = spec.decode_index(&g)?;
        let mut rec = vec![i.to_string(), idx.to_string(), format!("{:?}", spec.rank_value(idx))];
        rec.extend(g.as_slice().iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CorfError::Data { row: 0, message: e.to_string() })?;
    write_atomic(out, &bytes)?;
    Ok(format!("wrote {} predictions to {}", rows.len(), out.display()))
}

fn cmd_dumpleaves(checkpoint: &Path, out: &Path) -> Result<String> {
    let ck = Checkpoint::load(checkpoint)?;
    let forest = &ck.model.forest;
    let nk = forest.spec().thresholds();
    let mut text = String::from("tree,leaf");
    for k in 1..=nk {
        text.push_str(&format!(",tau{k}"));
    }
    text.push('\n');
    let mut monotone = 0usize;
    let mut rows = 0usize;
    for (m, t) in forest.trees().iter().enumerate() {
        for l in 0..t.leaves.leaves() {
            let row = t.leaves.row(l);
            text.push_str(&format!("{m},{l}"));
            for v in row {
                text.push_str(&format!(",{v:?}"));
            }
            text.push('\n');
            rows += 1;
            if row.windows(2).all(|w| w[1] <= w[0]) {
                monotone += 1;
            }
        }
    }
    write_atomic(out, text.as_bytes())?;
    Ok(format!(
        "{rows} leaf rows; monotone non-increasing: {monotone}/{rows} ({:.4})",
        monotone as f64 / rows as f64
    ))
}

#[allow(clippy::too_many_arguments)]
fn cmd_gradcheck(
    seed: Option<u64>,
    instances: Option<usize>,
    depth: Option<usize>,
    ranks: Option<usize>,
    trees: Option<usize>,
    arch: Option<&str>,
    activation: Option<&str>,
    tolerance: Option<f64>,
    corrupt: bool,
) -> Result<(String, bool)> {
    let mut g = GradcheckConfig::default();
    if let Some(v) = seed {
        g.seed = v;
    }
    if let Some(v) = instances {
        g.instances = v;
    }
    if let Some(v) = depth {
        g.depth = v;
    }
    if let Some(v) = ranks {
        g.ranks = v;
    }
    if let Some(v) = trees {
        g.trees = v;
    }
    if let Some(v) = arch {
        g.arch = ArchKind::parse(v)?;
    }
    if let Some(v) = activation {
        g.activation = Activation::parse(v)?;
    }
    if let Some(v) = tolerance {
        g.tolerance = v;
    }
    g.corrupt = corrupt;
    let report = oracle::gradcheck(&g)?;
    Ok((report.to_string(), report.passed))
}

fn dispatch(cli: Cli) -> Result<(String, bool)> {
    let ok = |s: String| Ok((s, true));
    match cli.command {
        Command::Synth { cfg, samples, ranks, out } => ok(cmd_synth(&cfg, samples, ranks, &out)?),
        Command::Train { cfg, overrides, train, val, out } => {
            let mut rc = run_config(&cfg)?;
            apply_overrides(&mut rc, &overrides);
            ok(cmd_train(&rc, &train, val.as_deref(), &out)?)
        }
        Command::Eval { cfg, checkpoint, data, out } => {
            ok(cmd_eval(&run_config(&cfg)?, &checkpoint, &data, out.as_deref())?)
        }
        Command::Predict { cfg, checkpoint, data, out } => {
            ok(cmd_predict(&run_config(&cfg)?, &checkpoint, &data, &out)?)
        }
        Command::Gradcheck { seed, instances, depth, ranks, trees, arch, activation, tolerance, corrupt } => {
            cmd_gradcheck(
                seed,
                instances,
                depth,
                ranks,
                trees,
                arch.as_deref(),
                activation.as_deref(),
                tolerance,
                corrupt,
            )
        }
        Command::Dumpleaves { checkpoint, out } => ok(cmd_dumpleaves(&checkpoint, &out)?),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code: 0 ok, 1 usage or config, 2 data, 3 numeric.
/// A failed gradcheck exits with 3.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok((msg, passed)) => {
            println!("{msg}");
            if passed {
                0
            } else {
                3
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
