//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

use std::fs::File;
use std::io::{self, BufReader};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use pamicnet::dataset::{self, RangeKind, SplitFractions};
use pamicnet::eval;
use pamicnet::mlp::{self, MlpModel, OneHot, TrainConfig};
use pamicnet::persist;
use pamicnet::response::{self, MicClass};
use pamicnet::train::{self, FinalMetrics};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Suite {
    failures: usize,
}

impl Suite {
    fn run(&mut self, id: u32, name: &str, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{id}] {name}: {detail} ({secs:.1}s)"),
            Err(reason) => {
                self.failures += 1;
                println!("FAIL [{id}] {name}: {reason} ({secs:.1}s)");
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Independent oracles.

/// Plain tanh network plus softmax cross-entropy, written directly from the
/// layer definitions without the library's kernels.
fn oracle_loss(m: &MlpModel, x: &[f64], labels: &[MicClass]) -> f64 {
    let n_in = m.dims[0];
    let mut total = 0.0;
    for (s, y) in labels.iter().enumerate() {
        let mut a: Vec<f64> = x[s * n_in..(s + 1) * n_in].to_vec();
        for (l, layer) in m.layers.iter().enumerate() {
            let z: Vec<f64> = (0..layer.fan_out)
                .map(|o| layer.biases[o] + (0..layer.fan_in).map(|i| layer.weights[o * layer.fan_in + i] * a[i]).sum::<f64>())
                .collect();
            a = if l + 1 < m.layers.len() { z.iter().map(|v| v.tanh()).collect() } else { z };
        }
        let mx = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + a.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        total += lse - a[y.index()];
    }
    total / labels.len() as f64
}

fn naive_softmax(z: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

fn sha256_file(path: &Path) -> io::Result<String> {
    let mut h = Sha256::new();
    io::copy(&mut BufReader::with_capacity(1 << 20, File::open(path)?), &mut h)?;
    Ok(hex::encode(h.finalize()))
}

// ---------------------------------------------------------------------------
// Cheap criteria.

fn gradient_oracle() -> Outcome {
    let dims = [6, 5, 4, 3];
    let step = 1e-5;
    let mut worst = 0.0f64;
    for instance in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + instance);
        let mut m = mlp::xavier_init(&dims, instance).map_err(|e| e.to_string())?;
        for l in &mut m.layers {
            for b in &mut l.biases {
                *b = rng.gen_range(-0.5..0.5);
            }
        }
        let batch = 5;
        let x: Vec<f64> = (0..batch * dims[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<MicClass> = (0..batch).map(|_| MicClass::ALL[rng.gen_range(0..3)]).collect();
        let cache = mlp::forward(&m, &x).map_err(|e| e.to_string())?;
        let grads = mlp::backward(&m, &cache, &y).map_err(|e| e.to_string())?;

        for l in 0..m.layers.len() {
            let nw = m.layers[l].weights.len();
            for k in 0..nw + m.layers[l].biases.len() {
                let analytic =
                    if k < nw { grads.layers[l].weights[k] } else { grads.layers[l].biases[k - nw] };
                let probe = |delta: f64| {
                    let mut p = m.clone();
                    if k < nw {
                        p.layers[l].weights[k] += delta;
                    } else {
                        p.layers[l].biases[k - nw] += delta;
                    }
                    oracle_loss(&p, &x, &y)
                };
                let numeric = (probe(step) - probe(-step)) / (2.0 * step);
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
    }
    check(worst < 1e-5, || format!("max relative error {worst:.3e} >= 1e-5"))?;
    Ok(format!("20 instances of [6,5,4,3], max relative error {worst:.3e} < 1e-5"))
}

fn filter_identities() -> Outcome {
    let specs = dataset::default_grid_specs();
    let mut f0s: Vec<f64> = Vec::new();
    for s in &specs {
        f0s.extend(s.f3_values());
        f0s.extend(s.f4_values());
    }
    let mut worst_lp = 0.0f64;
    for xi in dataset::xi_grid() {
        for &f0 in &f0s {
            let mag = response::lp2_response(f0, f0, xi).map_err(|e| e.to_string())?.norm();
            let expected = 1.0 / (2.0 * xi);
            worst_lp = worst_lp.max((mag - expected).abs() / expected);
        }
    }
    let mut worst_hp = 0.0f64;
    let mut n_f2 = 0;
    for s in &specs {
        for &f2 in &s.f2_values {
            let mag = response::hp_response(f2, f2).map_err(|e| e.to_string())?.norm();
            let expected = std::f64::consts::FRAC_1_SQRT_2;
            worst_hp = worst_hp.max((mag - expected).abs() / expected);
            n_f2 += 1;
        }
    }
    check(worst_lp <= 1e-12 && worst_hp <= 1e-12, || {
        format!("low-pass rel error {worst_lp:.3e}, high-pass rel error {worst_hp:.3e}")
    })?;
    Ok(format!(
        "|lp2(f0,f0,xi)| over 15 xi x {} f0 max rel err {worst_lp:.1e}; |hp(f2,f2)| over {n_f2} f2 max rel err {worst_hp:.1e}",
        f0s.len()
    ))
}

fn softmax_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst_sum = 0.0f64;
    let mut worst_naive = 0.0f64;
    let mut flips = 0;
    for _ in 0..10_000 {
        let z: Vec<f64> = (0..3).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let c: f64 = rng.gen_range(-500.0..500.0);
        let p = mlp::softmax(&z);
        worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());
        for (a, b) in p.iter().zip(naive_softmax(&z)) {
            worst_naive = worst_naive.max((a - b).abs());
        }
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        let ps = mlp::softmax(&shifted);
        worst_sum = worst_sum.max((ps.iter().sum::<f64>() - 1.0).abs());
        if argmax(&p) != argmax(&ps) || argmax(&p) != argmax(&z) {
            flips += 1;
        }
    }
    let ln3 = 3f64.ln();
    let mut worst_ce = 0.0f64;
    for c in MicClass::ALL {
        for u in [0.0, 1.0, -7.5, 300.0] {
            worst_ce = worst_ce.max((mlp::cross_entropy_with_logits(&[u, u, u], &OneHot::from(c)) - ln3).abs());
        }
    }
    check(worst_sum <= 1e-12, || format!("probability sum off by {worst_sum:.3e}"))?;
    check(worst_ce <= 1e-9, || format!("uniform loss off ln 3 by {worst_ce:.3e}"))?;
    check(flips == 0, || format!("{flips} argmax changes under shift"))?;
    check(worst_naive <= 1e-12, || format!("softmax differs from direct formula by {worst_naive:.3e}"))?;
    Ok(format!(
        "10^4 triples: max |sum-1| {worst_sum:.1e}, 0 argmax changes; uniform loss err {worst_ce:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// Pipeline criteria.

struct PipelineRun {
    dataset_sha: String,
    dataset_bytes: u64,
    sidecar: Vec<u8>,
    checkpoint: Vec<u8>,
    history: Vec<u8>,
    model: MlpModel,
    metrics: FinalMetrics,
    epochs: usize,
    n_records: usize,
    dims: Vec<usize>,
}

struct DatasetFacts {
    class_counts: [usize; 3],
    split_counts: (usize, usize, usize),
    worst_col: f64,
}

/// Generates, saves, splits, trains and saves. The dataset facts for the
/// exactness criterion are taken from the same in-memory dataset.
fn pipeline(range: RangeKind, dir: &Path, tag: &str) -> Result<(PipelineRun, DatasetFacts), String> {
    let e = |e: pamicnet::Error| e.to_string();
    let cfg = TrainConfig::default();
    let csv: PathBuf = dir.join(format!("{tag}.csv"));
    let (splits, facts, sha, bytes, sidecar, n_records) = {
        let d = dataset::training_dataset(range).map_err(e)?;
        let mut col_max = vec![0f64; d.n_features()];
        for (row, _) in d.rows() {
            for (m, v) in col_max.iter_mut().zip(row) {
                *m = m.max(v.abs());
            }
        }
        let worst_col = col_max.iter().map(|m| (m - 1.0).abs()).fold(0.0, f64::max);
        persist::save_dataset(&d, &csv, &dataset::default_grid_specs(), Some(cfg.seed)).map_err(e)?;
        let sha = sha256_file(&csv).map_err(|e| e.to_string())?;
        let bytes = std::fs::metadata(&csv).map_err(|e| e.to_string())?.len();
        let sidecar = std::fs::read(persist::sidecar_path(&csv)).map_err(|e| e.to_string())?;
        std::fs::remove_file(&csv).map_err(|e| e.to_string())?;
        let splits = dataset::shuffle_split(&d, cfg.seed, SplitFractions::default()).map_err(e)?;
        let facts = DatasetFacts {
            class_counts: d.class_counts(),
            split_counts: (splits.train.len(), splits.dev.len(), splits.test.len()),
            worst_col,
        };
        (splits, facts, sha, bytes, sidecar, d.len())
    };
    let (model, history) = train::train(&splits, &cfg).map_err(e)?;
    let ckpt = dir.join(format!("{tag}.checkpoint.json"));
    let hist = dir.join(format!("{tag}.history.csv"));
    train::save_checkpoint(&model, &history, &ckpt).map_err(e)?;
    train::save_history(&history, false, &hist).map_err(e)?;
    let run = PipelineRun {
        dataset_sha: sha,
        dataset_bytes: bytes,
        sidecar,
        checkpoint: std::fs::read(&ckpt).map_err(|e| e.to_string())?,
        history: std::fs::read(&hist).map_err(|e| e.to_string())?,
        dims: model.dims.clone(),
        model,
        metrics: history.final_metrics.clone(),
        epochs: history.epochs.len(),
        n_records,
    };
    Ok((run, facts))
}

fn accuracy_row(run: &PipelineRun, n_features: usize, dims: &[usize]) -> Outcome {
    let m = &run.metrics;
    let accs = [m.train_acc, m.dev_acc, m.test_acc];
    check(run.n_records == 202_500, || format!("{} records, expected 202500", run.n_records))?;
    check(run.dims == dims, || format!("dims {:?}, expected {dims:?}", run.dims))?;
    check(run.model.n_inputs() == n_features, || format!("{} inputs", run.model.n_inputs()))?;
    check(run.epochs == 100, || format!("{} epochs", run.epochs))?;
    check(accs.iter().all(|a| *a >= 0.999), || {
        format!("accuracy train {:.5} dev {:.5} test {:.5} below 0.999", accs[0], accs[1], accs[2])
    })?;
    Ok(format!(
        "202500 records, dims {dims:?}, 100 epochs, accuracy train {:.3}% dev {:.3}% test {:.3}%",
        100.0 * accs[0],
        100.0 * accs[1],
        100.0 * accs[2]
    ))
}

fn main() {
    let mut suite = Suite { failures: 0 };
    let total = Instant::now();

    suite.run(5, "gradient oracle", gradient_oracle);
    suite.run(6, "analytic filter identities", filter_identities);
    suite.run(9, "softmax and cross-entropy properties", softmax_properties);

    let dir = tempfile::tempdir().expect("temporary directory");
    eprintln!("running full-range pipeline (1/2)");
    let first = pipeline(RangeKind::Full, dir.path(), "run1");

    suite.run(7, "dataset exactness", || {
        let (_, f) = first.as_ref().map_err(Clone::clone)?;
        check(f.class_counts == [67_500; 3], || format!("class counts {:?}", f.class_counts))?;
        check(f.split_counts == (182_250, 10_125, 10_125), || format!("split {:?}", f.split_counts))?;
        check(f.worst_col <= 1e-12, || format!("column max abs off 1 by {:.3e}", f.worst_col))?;
        Ok(format!(
            "67500 per class, split 182250/10125/10125, column max abs within {:.1e} of 1",
            f.worst_col
        ))
    });

    suite.run(1, "full-range accuracy table row", || {
        let (r, _) = first.as_ref().map_err(Clone::clone)?;
        accuracy_row(r, 300, &[300, 25, 12, 3])
    });

    suite.run(3, "off-grid tests", || {
        let (r, _) = first.as_ref().map_err(Clone::clone)?;
        let t = eval::run_offgrid_tests(&r.model, TrainConfig::default().seed).map_err(|e| e.to_string())?;
        check(t.correct == 15 && t.total == 15, || format!("{}/{} correct\n{}", t.correct, t.total, t.to_text()))?;
        let mut aggregate = 0;
        for seed in 1..=10u64 {
            aggregate += eval::run_offgrid_tests(&r.model, 1000 + seed).map_err(|e| e.to_string())?.correct;
        }
        check(aggregate >= 148, || format!("{aggregate}/150 over 10 seeds"))?;
        Ok(format!("15/15 correct; {aggregate}/150 over 10 further seeds"))
    });

    suite.run(4, "single-record latency", || {
        let (r, _) = first.as_ref().map_err(Clone::clone)?;
        let t = eval::run_offgrid_tests(&r.model, TrainConfig::default().seed).map_err(|e| e.to_string())?;
        let l = &t.predict_latency;
        check(l.median_ms < 17.0, || format!("median {:.4} ms", l.median_ms))?;
        Ok(format!(
            "median {:.4} ms, p95 {:.4} ms over {} runs; end to end median {:.4} ms",
            l.median_ms, l.p95_ms, l.repetitions, t.end_to_end_latency.median_ms
        ))
    });

    eprintln!("running full-range pipeline (2/2)");
    suite.run(8, "determinism", || {
        let (a, _) = first.as_ref().map_err(Clone::clone)?;
        let (b, _) = pipeline(RangeKind::Full, dir.path(), "run2")?;
        check(a.dataset_bytes == b.dataset_bytes && a.dataset_sha == b.dataset_sha, || {
            format!("dataset CSV differs: {} vs {}", a.dataset_sha, b.dataset_sha)
        })?;
        check(a.sidecar == b.sidecar, || "dataset sidecar differs".into())?;
        check(a.checkpoint == b.checkpoint, || "checkpoint differs".into())?;
        check(a.history == b.history, || "history differs".into())?;
        Ok(format!(
            "dataset CSV ({} bytes, sha256 {}...), checkpoint ({} bytes) and history ({} bytes) identical",
            a.dataset_bytes,
            &a.dataset_sha[..16],
            a.checkpoint.len(),
            a.history.len()
        ))
    });
    drop(first);

    eprintln!("running restricted-range pipeline");
    suite.run(2, "restricted-range accuracy table row", || {
        let (r, _) = pipeline(RangeKind::Restricted, dir.path(), "restricted")?;
        accuracy_row(&r, 140, &[140, 25, 12, 3])
    });

    println!(
        "{} of 9 criteria passed in {:.0}s",
        9 - suite.failures,
        total.elapsed().as_secs_f64()
    );
    if suite.failures > 0 {
        std::process::exit(1);
    }
}
