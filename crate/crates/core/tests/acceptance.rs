//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use corf::backbone::{Activation, ArchKind, Backbone, BackboneArch};
use corf::baseline::train_cor;
use corf::learning::{self, cache_loss, leaf_update, BatchCache, EpochRecord};
use corf::metrics::{cs, plcc, srcc};
use corf::oracle::{self, GradcheckConfig};
use corf::tree::{self, Routing, SubtreePartials};
use corf::{Checkpoint, CorfModel, Dataset, Forest, LeafTable, OrdinalSpec, SynthConfig, TrainConfig, TreeTopology};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn random_leaves(rng: &mut ChaCha8Rng, leaves: usize, k: usize) -> LeafTable {
    let tau = (0..leaves * k).map(|_| rng.random_range(0.01..0.99)).collect();
    LeafTable::from_rows(leaves, k, tau).unwrap()
}

/// Random backbone, forest with random leaves and labelled inputs.
fn random_model(rng: &mut ChaCha8Rng, depth: usize, ranks: usize, samples: usize) -> (CorfModel, Dataset) {
    let spec = OrdinalSpec::new(0.0, 1.0, ranks).unwrap();
    let input = rng.random_range(2..6);
    let features = rng.random_range(3..12);
    let trees = rng.random_range(1..4);
    let arch = if rng.random_bool(0.5) {
        BackboneArch::linear(input, features)
    } else {
        BackboneArch::mlp1(input, rng.random_range(2..8), features, Activation::Tanh)
    };
    let backbone = Backbone::init(arch, rng.random()).unwrap();
    let mut forest = Forest::build(trees, depth, features, spec, rng.random()).unwrap();
    for t in forest.trees_mut() {
        t.leaves = random_leaves(rng, t.leaves.leaves(), ranks - 1);
    }
    let xs = (0..samples).map(|_| random_vec(rng, input, 2.0)).collect();
    let ys = (0..samples).map(|_| rng.random_range(0..ranks) as f64).collect();
    (CorfModel::new(backbone, forest).unwrap(), Dataset::new(spec, xs, ys).unwrap())
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut count = 0;
    for depth in [2, 3, 4] {
        for ranks in [2, 5, 10] {
            for (arch, activation) in [(ArchKind::Linear, Activation::Tanh), (ArchKind::Mlp1, Activation::Tanh)] {
                let cfg = GradcheckConfig { arch, activation, depth, ranks, seed: 1000 + count as u64, ..Default::default() };
                for i in 0..6 {
                    worst = worst.max(oracle::gradcheck_instance(&cfg, i).unwrap());
                    count += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        count >= 100 && worst < 1e-5 && elapsed < Duration::from_secs(60),
        format!("{count} instances, worst relative error {worst:.2e}, {:.1}s", elapsed.as_secs_f64()),
    )
}

fn routing_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let depth = rng.random_range(2..=6);
        let features = rng.random_range(1..80);
        let topo = TreeTopology::build(depth, features, rng.random()).unwrap();
        let scale = [0.1, 1.0, 10.0, 100.0][rng.random_range(0..4)];
        let r = topo.route(&random_vec(&mut rng, features, scale)).unwrap();
        let total: f64 = r.leaf().iter().sum();
        worst = worst.max((total - 1.0).abs());
    }
    check(worst <= 1e-9, format!("10000 pairs, worst |Σp - 1| = {worst:.2e}"))
}

fn subtree_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut worst_oracle = 0.0f64;
    let mut nodes = 0;
    for _ in 0..200 {
        let depth = rng.random_range(2..=6);
        let k = rng.random_range(1..10);
        let topo = TreeTopology::build(depth, 16, rng.random()).unwrap();
        let leaves = random_leaves(&mut rng, topo.leaf_count(), k);
        let r = topo.route(&random_vec(&mut rng, 16, 3.0)).unwrap();
        let part = SubtreePartials::compute(&r, &leaves).unwrap();
        for n in 0..topo.split_count() {
            for kk in 0..k {
                for c in 0..2 {
                    let (l, rt) = (part.left(n, kk, c), part.right(n, kk, c));
                    worst = worst.max((part.node(n, kk, c) - (l + rt)).abs());
                    let (ol, or) = oracle::subtree_sums_direct(r.leaf(), &leaves, n, kk, c);
                    worst_oracle = worst_oracle.max((ol - l).abs()).max((or - rt).abs());
                }
            }
            nodes += 1;
        }
    }
    check(
        worst <= 1e-12 && worst_oracle <= 1e-12,
        format!("{nodes} split nodes, parent-children gap {worst:.2e}, direct-sum gap {worst_oracle:.2e}"),
    )
}

fn variational_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let eps = 1e-12;
    let mut worst_single = f64::NEG_INFINITY;
    let mut worst_chain = f64::NEG_INFINITY;
    let instances = 500;
    for i in 0..instances {
        let depth = rng.random_range(2..=5);
        let ranks = rng.random_range(2..=10);
        let samples = rng.random_range(1..40);
        let (model, data) = random_model(&mut rng, depth, ranks, samples);
        let idx: Vec<usize> = (0..data.len()).collect();
        let cache = BatchCache::build(&model, &data, &idx).unwrap();
        let view = cache.tree(0);
        let mut leaves = model.forest.trees()[0].leaves.clone();
        let mut prev = cache_loss(&leaves, view, eps).unwrap();
        let steps = if i % 10 == 0 { 20 } else { 1 };
        for s in 0..steps {
            leaves = leaf_update(&leaves, view, eps).unwrap().leaves;
            let now = cache_loss(&leaves, view, eps).unwrap();
            if s == 0 {
                worst_single = worst_single.max(now - prev);
            }
            worst_chain = worst_chain.max(now - prev);
            prev = now;
        }
    }
    check(
        worst_single <= 1e-10 && worst_chain <= 1e-10,
        format!("{instances} instances, worst one-step increase {worst_single:.2e}, worst increase over 20-step chains {worst_chain:.2e}"),
    )
}

fn leaf_fixed_points() -> Outcome {
    let eps = 1e-12;
    let spec = OrdinalSpec::new(0.0, 1.0, 6).unwrap();
    let topo = TreeTopology::build(4, 5, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let routings: Vec<Routing> = (0..30).map(|_| topo.route(&random_vec(&mut rng, 5, 2.0)).unwrap()).collect();
    let targets = vec![spec.encode(5.0).unwrap(); 30];
    let cache = BatchCache::from_parts(targets, vec![routings]);
    let mut leaves = LeafTable::filled(topo.leaf_count(), 5, 0.5);
    let mut reached = None;
    for it in 1..=50 {
        leaves = leaf_update(&leaves, cache.tree(0), eps).unwrap().leaves;
        if leaves.as_slice().iter().all(|&t| t == 1.0 - eps) {
            reached = Some(it);
            break;
        }
    }

    let labels = [0.0, 1.0, 1.0, 3.0, 4.0, 5.0, 5.0];
    let targets: Vec<_> = labels.iter().map(|&y| spec.encode(y).unwrap()).collect();
    let mean: Vec<f64> = (0..5)
        .map(|k| targets.iter().map(|d| d.get(k)).sum::<f64>() / labels.len() as f64)
        .collect();
    let single = vec![Routing::from_leaf_probabilities(vec![1.0]); labels.len()];
    let cache = BatchCache::from_parts(targets, vec![single]);
    let one = leaf_update(&LeafTable::filled(1, 5, 0.5), cache.tree(0), eps).unwrap().leaves;
    let gap = one.row(0).iter().zip(&mean).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    check(
        reached.is_some() && gap <= 1e-12,
        format!("all-ones cache clamped after {reached:?} iterations; single-leaf gap to empirical mean {gap:.2e}"),
    )
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let eps = 1e-12;
    let (mut route_gap, mut update_gap, mut loss_gap) = (0.0f64, 0.0f64, 0.0f64);
    let n = 60;
    for _ in 0..n {
        let depth = rng.random_range(2..=6);
        let features = rng.random_range(2..20);
        let topo = TreeTopology::build(depth, features, rng.random()).unwrap();
        let f = random_vec(&mut rng, features, 3.0);
        let fast = topo.route(&f).unwrap();
        let slow = oracle::route_by_paths(&f, &topo);
        for (a, b) in fast.leaf().iter().zip(&slow) {
            route_gap = route_gap.max((a - b).abs());
        }

        let ranks = rng.random_range(2..=10);
        let (depth, samples) = (rng.random_range(2..=5), rng.random_range(1..30));
        let (model, data) = random_model(&mut rng, depth, ranks, samples);
        let idx: Vec<usize> = (0..data.len()).collect();
        let cache = BatchCache::build(&model, &data, &idx).unwrap();
        let leaves = &model.forest.trees()[0].leaves;
        let a = leaf_update(leaves, cache.tree(0), eps).unwrap().leaves;
        let b = oracle::leaf_update_naive(leaves, cache.tree(0), eps).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            update_gap = update_gap.max((x - y).abs());
        }

        for i in 0..data.len() {
            let r = &cache.tree(0).routings[i];
            let g = tree::predict(r, leaves).unwrap();
            let d = data.target(i);
            let fast = learning::loss(&g, &d, eps);
            let literal = oracle::loss_two_channel_mixture(r.leaf(), leaves, d.as_slice());
            let two = oracle::loss_two_channel(g.as_slice(), d.as_slice(), eps);
            loss_gap = loss_gap.max((fast - literal).abs()).max((fast - two).abs());
        }
    }
    check(
        route_gap <= 1e-12 && update_gap <= 1e-12 && loss_gap <= 1e-12,
        format!("{n} instances each: routing {route_gap:.2e}, leaf update {update_gap:.2e}, loss {loss_gap:.2e}"),
    )
}

/// Benchmark data: 2500 samples at seed 7, first 2000 train, last 500 test.
fn benchmark_data() -> (Dataset, Dataset) {
    let all = SynthConfig { samples: 2500, ranks: 10, input_dim: 8, noise_sd: 0.0, seed: 7, ..Default::default() }
        .generate()
        .unwrap();
    let train = all.select(&(0..2000).collect::<Vec<_>>()).unwrap();
    let test = all.select(&(2000..2500).collect::<Vec<_>>()).unwrap();
    (train, test)
}

fn benchmark_config(seed: u64) -> (BackboneArch, TrainConfig) {
    let config = TrainConfig { features: 64, seed, ..Default::default() };
    (BackboneArch::mlp1(8, 64, 64, Activation::Tanh), config)
}

fn rank_predictions(predict: impl Fn(&[f64]) -> usize, data: &Dataset) -> Vec<usize> {
    (0..data.len()).map(|i| predict(data.features(i))).collect()
}

struct BenchRun {
    corf_mae: f64,
    corf_cs1: f64,
    corf_time: Duration,
    cor_mae: f64,
}

fn bench_run(train: &Dataset, test: &Dataset, seed: u64) -> BenchRun {
    let (arch, config) = benchmark_config(seed);
    let start = Instant::now();
    let out = learning::train(train, None, arch, &config).unwrap();
    let corf_time = start.elapsed();
    let pred = rank_predictions(|x| out.model.predict_rank_index(x).unwrap(), test);
    let cor = train_cor(train, arch, &config).unwrap();
    let cor_pred = rank_predictions(|x| cor.predict_rank_index(x).unwrap(), test);
    BenchRun {
        corf_mae: corf::metrics::mae(&pred, test.rank_indices()).unwrap(),
        corf_cs1: cs(&pred, test.rank_indices(), 1).unwrap(),
        corf_time,
        cor_mae: corf::metrics::mae(&cor_pred, test.rank_indices()).unwrap(),
    }
}

fn synthetic_benchmark(run: &BenchRun) -> Outcome {
    check(
        run.corf_mae <= 0.5 && run.corf_cs1 >= 0.90 && run.corf_time < Duration::from_secs(300),
        format!(
            "test MAE {:.4}, CS(1) {:.4}, training {:.1}s",
            run.corf_mae,
            run.corf_cs1,
            run.corf_time.as_secs_f64()
        ),
    )
}

fn corf_vs_cor(runs: &[(u64, &BenchRun)]) -> Outcome {
    let wins = runs.iter().filter(|(_, r)| r.corf_mae <= r.cor_mae).count();
    let detail = runs
        .iter()
        .map(|(s, r)| format!("seed {s}: CORF {:.4} vs COR {:.4}", r.corf_mae, r.cor_mae))
        .collect::<Vec<_>>()
        .join("; ");
    check(wins >= 2, format!("{wins}/3 seeds with CORF MAE <= COR MAE ({detail})"))
}

fn determinism() -> Outcome {
    let data = SynthConfig { samples: 300, ranks: 6, input_dim: 5, seed: 11, ..Default::default() }
        .generate()
        .unwrap();
    let config = TrainConfig { trees: 3, depth: 4, features: 10, epochs: 3, lr: 0.02, batch_size: 32, seed: 5, ..Default::default() };
    let arch = BackboneArch::mlp1(5, 12, 10, Activation::Tanh);
    let artifacts = || {
        let out = learning::train(&data, Some(&data), arch, &config).unwrap();
        let log: String = out.log.iter().map(|r| r.to_csv() + "\n").collect();
        let ck = Checkpoint { model: out.model, config: config.clone(), epoch: out.epochs_run };
        (ck.to_bytes(), format!("{}\n{log}", EpochRecord::CSV_HEADER))
    };
    let (ck_a, log_a) = artifacts();
    let (ck_b, log_b) = artifacts();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let loaded = {
        let ck = Checkpoint::from_bytes(&ck_a).unwrap();
        ck.save(&path).unwrap();
        Checkpoint::load(&path).unwrap()
    };
    let on_disk = std::fs::read(&path).unwrap();
    let resaved = loaded.to_bytes();
    check(
        ck_a == ck_b && log_a == log_b && on_disk == ck_a && resaved == ck_a,
        format!(
            "repeat run: checkpoint identical {}, log identical {}; save/load/save identical {}",
            ck_a == ck_b,
            log_a == log_b,
            on_disk == ck_a && resaved == ck_a
        ),
    )
}

fn metric_identities() -> Outcome {
    let x = [0.3, -1.2, 4.5, 2.0, 0.0, 7.25];
    let affine: Vec<f64> = x.iter().map(|v| 3.5 * v - 2.0).collect();
    let p = plcc(&x, &affine).unwrap();
    let decreasing = [10.0, 8.0, 5.5, 1.0, -3.0, -3.5];
    let increasing = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let s_neg = srcc(&increasing, &decreasing).unwrap();
    let s_hand = srcc(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut cs_monotone = true;
    for _ in 0..100 {
        let n = rng.random_range(1..50);
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
        let curve: Vec<f64> = (0..10).map(|l| cs(&pred, &truth, l).unwrap()).collect();
        cs_monotone &= curve.windows(2).all(|w| w[1] >= w[0]) && (curve[9] - 1.0).abs() <= 1e-12;
    }
    check(
        (p - 1.0).abs() <= 1e-12 && (s_neg + 1.0).abs() <= 1e-12 && (s_hand - 0.8).abs() <= 1e-12 && cs_monotone,
        format!("PLCC affine {p}, SRCC decreasing {s_neg}, SRCC hand example {s_hand}, CS monotone in L {cs_monotone}"),
    )
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    match outcome {
        Ok(detail) => {
            println!("PASS  {name}: {detail}");
            true
        }
        Err(detail) => {
            println!("FAIL  {name}: {detail}");
            false
        }
    }
}

fn main() {
    let mut ok = true;
    ok &= run("1 gradient fidelity", gradient_fidelity);
    ok &= run("2 routing normalization", routing_normalization);
    ok &= run("3 subtree identity", subtree_identity);
    ok &= run("4 variational-bound monotonicity", variational_monotonicity);
    ok &= run("5 leaf fixed points", leaf_fixed_points);
    ok &= run("6 oracle equivalence", oracle_equivalence);

    let (train, test) = benchmark_data();
    let runs: Vec<(u64, Option<BenchRun>)> = [7u64, 8, 9]
        .into_iter()
        .map(|s| (s, catch_unwind(AssertUnwindSafe(|| bench_run(&train, &test, s))).ok()))
        .collect();
    let ok_runs: Vec<(u64, &BenchRun)> = runs.iter().filter_map(|(s, r)| r.as_ref().map(|r| (*s, r))).collect();
    ok &= run("7 synthetic benchmark", || match runs[0].1.as_ref() {
        Some(r) => synthetic_benchmark(r),
        None => Err("benchmark run panicked".into()),
    });
    ok &= run("8 CORF vs COR", || corf_vs_cor(&ok_runs));

    ok &= run("9 determinism and serialization", determinism);
    ok &= run("10 metric identities", metric_identities);

    if !ok {
        std::process::exit(1);
    }
}
