//! Accuracy tables, off-grid tests, latency and curve export.

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, ClassGridSpec, Dataset, RangeKind, SplitFractions};
use crate::mlp::{self, MlpModel, TrainConfig};
use crate::persist::format_f64;
use crate::response::{self, FrequencyGrid, MicClass, MicParams};
use crate::train::{self, TrainHistory};
use crate::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; MicClass::COUNT]; MicClass::COUNT],
}

impl ConfusionMatrix {
    pub fn add(&mut self, truth: MicClass, predicted: MicClass) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..MicClass::COUNT).map(|i| self.counts[i][i]).sum()
    }

    pub fn off_diagonal(&self) -> usize {
        self.total() - self.trace()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("true \\ pred   ECM30B    ECM60     WM66\n");
        for c in MicClass::ALL {
            let r = &self.counts[c.index()];
            writeln!(s, "{:<12} {:>7}  {:>7}  {:>7}", c.name(), r[0], r[1], r[2]).unwrap();
        }
        s
    }
}

pub fn confusion(model: &MlpModel, d: &Dataset) -> Result<ConfusionMatrix> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let predicted = train::predict_dataset(model, d)?;
    let mut m = ConfusionMatrix::default();
    for (t, p) in d.labels().iter().zip(predicted) {
        m.add(*t, p);
    }
    Ok(m)
}

/// Fraction of rows whose predicted class equals the label.
pub fn accuracy(model: &MlpModel, d: &Dataset) -> Result<f64> {
    Ok(confusion(model, d)?.accuracy())
}

/// Single-inference wall time statistics, in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub repetitions: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl LatencyReport {
    pub fn from_samples(mut ms: Vec<f64>) -> Result<Self> {
        if ms.is_empty() {
            return Err(Error::EmptyDataset);
        }
        ms.sort_by(f64::total_cmp);
        let n = ms.len();
        let at = |q: f64| ms[(((n - 1) as f64) * q).round() as usize];
        Ok(LatencyReport { repetitions: n, median_ms: at(0.5), p95_ms: at(0.95), max_ms: ms[n - 1] })
    }
}

/// Times `reps` calls of `f` after a short warm-up.
fn time_calls(reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<LatencyReport> {
    for _ in 0..reps.min(50) {
        f()?;
    }
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        f()?;
        samples.push(t.elapsed().as_secs_f64() * 1e3);
    }
    LatencyReport::from_samples(samples)
}

/// Predict-only latency on an already normalized record.
pub fn predict_latency(model: &MlpModel, features: &[f64], reps: usize) -> Result<LatencyReport> {
    time_calls(reps, || mlp::predict(model, features).map(|_| ()))
}

/// Synthesis of the sweep, normalization and prediction, per call.
pub fn end_to_end_latency(model: &MlpModel, params: &MicParams, reps: usize) -> Result<LatencyReport> {
    let (grid, norm) = attached(model)?;
    time_calls(reps, || {
        let (a, ph) = response::amplitude_phase_sweep(params, grid)?;
        let mut x: Vec<f64> = a.into_iter().chain(ph).collect();
        norm.apply(&mut x)?;
        mlp::predict(model, &x).map(|_| ())
    })
}

fn attached(model: &MlpModel) -> Result<(&FrequencyGrid, &dataset::NormStats)> {
    match (&model.grid, &model.norm) {
        (Some(g), Some(n)) => Ok((g, n)),
        _ => Err(Error::Schema("model has no grid or normalization attached".into())),
    }
}

/// Seed of the train/dev/test shuffle used by the table runs.
pub const SPLIT_SEED: u64 = 7;

/// One row of the accuracy table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub range: RangeKind,
    pub frequency_range: String,
    pub n_features: usize,
    pub train_acc: f64,
    pub dev_acc: f64,
    pub test_acc: f64,
    pub epochs: usize,
    pub test_confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub rows: Vec<AccuracyRow>,
}

impl AccuracyReport {
    pub fn to_text(&self) -> String {
        let mut s = String::from("Frequency range   Features   Accuracy (train, dev, test)      Epochs\n");
        for r in &self.rows {
            writeln!(
                s,
                "{:<17} {:>8}   {:>7.3}%, {:>7.3}%, {:>7.3}%   {:>6}",
                r.frequency_range,
                r.n_features,
                100.0 * r.train_acc,
                100.0 * r.dev_acc,
                100.0 * r.test_acc,
                r.epochs
            )
            .unwrap();
        }
        s
    }
}

/// Model, history and table row for one frequency range.
#[derive(Debug, Clone)]
pub struct AccuracyRun {
    pub row: AccuracyRow,
    pub model: MlpModel,
    pub history: TrainHistory,
}

/// Generates the range's dataset, splits it with `split_seed`, trains and
/// scores.
pub fn run_accuracy_row(range: RangeKind, cfg: &TrainConfig, split_seed: u64) -> Result<AccuracyRun> {
    let splits = {
        let d = dataset::training_dataset(range)?;
        dataset::shuffle_split(&d, split_seed, SplitFractions::default())?
    };
    let (model, history) = train::train(&splits, cfg)?;
    let row = AccuracyRow {
        range,
        frequency_range: range.label().to_string(),
        n_features: splits.train.n_features(),
        train_acc: history.final_metrics.train_acc,
        dev_acc: history.final_metrics.dev_acc,
        test_acc: history.final_metrics.test_acc,
        epochs: history.epochs.len(),
        test_confusion: confusion(&model, &splits.test)?,
    };
    Ok(AccuracyRun { row, model, history })
}

/// Both rows: full range (300 features) then restricted range (140).
pub fn run_accuracy_table(cfg: &TrainConfig, split_seed: u64) -> Result<(AccuracyReport, Vec<AccuracyRun>)> {
    let runs = [RangeKind::Full, RangeKind::Restricted]
        .into_iter()
        .map(|r| run_accuracy_row(r, cfg, split_seed))
        .collect::<Result<Vec<_>>>()?;
    Ok((AccuracyReport { rows: runs.iter().map(|r| r.row.clone()).collect() }, runs))
}

/// Off-grid classification results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffgridReport {
    pub seed: u64,
    pub n_features: usize,
    /// Predicted labels per true class, in test order.
    pub predictions: Vec<(MicClass, Vec<MicClass>)>,
    pub params: Vec<(MicClass, MicParams)>,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub predict_latency: LatencyReport,
    pub end_to_end_latency: LatencyReport,
}

impl OffgridReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (class, preds) in &self.predictions {
            writeln!(s, "Microphone type {class}").unwrap();
            let tests: Vec<String> = (1..=preds.len()).map(|i| format!("Test {i}")).collect();
            writeln!(s, "  Applied test                    {}", tests.join("  ")).unwrap();
            let labels: Vec<String> = preds.iter().map(|p| format!("{:>6}", p.index())).collect();
            writeln!(s, "  Neural network classification   {}", labels.join("  ")).unwrap();
            let marks: Vec<String> =
                preds.iter().map(|p| format!("{:>6}", if p == class { "ok" } else { "WRONG" })).collect();
            writeln!(s, "  Accuracy                        {}", marks.join("  ")).unwrap();
        }
        writeln!(
            s,
            "Classification accuracy with {} features model: {:.0}% ({}/{}).",
            self.n_features,
            100.0 * self.accuracy,
            self.correct,
            self.total
        )
        .unwrap();
        writeln!(
            s,
            "Prediction time: median {:.4} ms, p95 {:.4} ms, max {:.4} ms over {} runs (predict only); median {:.4} ms end to end.",
            self.predict_latency.median_ms,
            self.predict_latency.p95_ms,
            self.predict_latency.max_ms,
            self.predict_latency.repetitions,
            self.end_to_end_latency.median_ms
        )
        .unwrap();
        s
    }
}

pub const OFFGRID_PER_CLASS: usize = 5;
pub const LATENCY_REPS: usize = 1000;

/// Five off-grid tuples per class, synthesized on the model's grid,
/// normalized with the model's stats and classified.
pub fn run_offgrid_tests(model: &MlpModel, seed: u64) -> Result<OffgridReport> {
    let (grid, norm) = attached(model)?;
    let specs = dataset::default_grid_specs();
    let params = dataset::offgrid_params(&specs, seed, OFFGRID_PER_CLASS);
    let raw = dataset::make_offgrid_tests(&specs, grid, seed, OFFGRID_PER_CLASS)?;
    let tests = dataset::normalize(raw, norm)?;

    let mut predictions: Vec<(MicClass, Vec<MicClass>)> = MicClass::ALL.iter().map(|c| (*c, Vec::new())).collect();
    let mut correct = 0;
    for (row, label) in tests.rows() {
        let (p, _) = mlp::predict(model, row)?;
        correct += usize::from(p == label);
        predictions[label.index()].1.push(p);
    }
    let predict_latency = predict_latency(model, tests.row(0), LATENCY_REPS)?;
    let end_to_end_latency = end_to_end_latency(model, &params[0].1, LATENCY_REPS)?;
    Ok(OffgridReport {
        seed,
        n_features: model.n_inputs(),
        predictions,
        params,
        correct,
        total: tests.len(),
        accuracy: correct as f64 / tests.len() as f64,
        predict_latency,
        end_to_end_latency,
    })
}

pub const CURVES_PER_CLASS: usize = 10;
const CURVE_SEED: u64 = 2019;

/// Ten grid tuples for one class. Both dampings step through the damping
/// grid from its smallest to its largest value; the frequencies are drawn
/// from the class grid with a fixed seed.
pub fn curve_params(spec: &ClassGridSpec) -> Vec<MicParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(CURVE_SEED + spec.mic_class.index() as u64);
    let (f3s, f4s) = (spec.f3_values(), spec.f4_values());
    let last = spec.xi_values.len() - 1;
    (0..CURVES_PER_CLASS)
        .map(|k| {
            let xi = spec.xi_values[(k * last + (CURVES_PER_CLASS - 1) / 2) / (CURVES_PER_CLASS - 1)];
            MicParams {
                f2: *spec.f2_values.choose(&mut rng).expect("non-empty"),
                f3: *f3s.choose(&mut rng).expect("non-empty"),
                f4: *f4s.choose(&mut rng).expect("non-empty"),
                xi3: xi,
                xi4: xi,
            }
        })
        .collect()
}

/// Long-format `class,curve_id,frequency_hz,amplitude,phase_rad` rows for
/// plotting. Returns the number of data rows.
pub fn write_curves<W: Write>(specs: &[ClassGridSpec], grid: &FrequencyGrid, mut out: W) -> Result<usize> {
    writeln!(out, "class,curve_id,frequency_hz,amplitude,phase_rad")?;
    let mut rows = 0;
    let (mut fb, mut ab, mut pb) = (String::new(), String::new(), String::new());
    for spec in specs {
        for (id, p) in curve_params(spec).iter().enumerate() {
            let (amps, phases) = response::amplitude_phase_sweep(p, grid)?;
            for ((f, a), ph) in grid.points.iter().zip(&amps).zip(&phases) {
                format_f64(*f, &mut fb);
                format_f64(*a, &mut ab);
                format_f64(*ph, &mut pb);
                writeln!(out, "{},{id},{fb},{ab},{pb}", spec.mic_class.index())?;
                rows += 1;
            }
        }
    }
    out.flush()?;
    Ok(rows)
}

pub fn emit_curves(specs: &[ClassGridSpec], grid: &FrequencyGrid, path: &std::path::Path) -> Result<usize> {
    let f = std::fs::File::create(path)?;
    write_curves(specs, grid, std::io::BufWriter::new(f))
}
