//! Mini-batch training loop, metrics and checkpoints.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, NormStats, SplitSet};
use crate::mlp::{
    self, AdamState, BackwardScratch, Dense, ForwardCache, Gradients, MlpModel, TrainConfig,
};
use crate::persist::format_f64;
use crate::response::{FrequencyGrid, MicClass};
use crate::{Error, Result};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Rows per forward pass when scoring a whole dataset.
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    /// Running mean over the epoch's mini-batches, taken before each update.
    pub train_loss: f64,
    pub train_acc: f64,
    pub dev_loss: f64,
    pub dev_acc: f64,
    pub seconds: f64,
}

/// End-of-training loss and accuracy on every split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub train_loss: f64,
    pub train_acc: f64,
    pub dev_loss: f64,
    pub dev_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochMetrics>,
    pub final_metrics: FinalMetrics,
    pub config: TrainConfig,
    pub seed: u64,
}

/// Mean loss and accuracy of `model` over `d`.
pub fn evaluate_epoch(model: &MlpModel, d: &Dataset) -> Result<(f64, f64)> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_features(model, d)?;
    let mut cache = ForwardCache::default();
    let (mut loss, mut correct) = (0.0, 0usize);
    let n_in = model.n_inputs();
    for (x, y) in d.features().chunks(EVAL_CHUNK * n_in).zip(d.labels().chunks(EVAL_CHUNK)) {
        mlp::forward_into(model, x, &mut cache)?;
        let (l, c) = mlp::score_batch(&cache, y);
        loss += l;
        correct += c;
    }
    Ok((loss / d.len() as f64, correct as f64 / d.len() as f64))
}

/// Predicted class of every row.
pub fn predict_dataset(model: &MlpModel, d: &Dataset) -> Result<Vec<MicClass>> {
    check_features(model, d)?;
    let mut cache = ForwardCache::default();
    let mut out = Vec::with_capacity(d.len());
    for x in d.features().chunks(EVAL_CHUNK * model.n_inputs()) {
        mlp::forward_into(model, x, &mut cache)?;
        out.extend((0..cache.batch).map(|s| mlp::classify_logits(cache.logits_row(s)).0));
    }
    Ok(out)
}

fn check_features(model: &MlpModel, d: &Dataset) -> Result<()> {
    if d.n_features() != model.n_inputs() {
        return Err(Error::Shape(format!(
            "dataset has {} features, model takes {}",
            d.n_features(),
            model.n_inputs()
        )));
    }
    Ok(())
}

/// Shuffle order for one epoch; stream `epoch` of the seeded generator.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Trains a fresh `[n_in, 25, 12, 3]` network.
pub fn train(splits: &SplitSet, cfg: &TrainConfig) -> Result<(MlpModel, TrainHistory)> {
    train_with(splits, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    splits: &SplitSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(MlpModel, TrainHistory)> {
    cfg.validate()?;
    let train_set = &splits.train;
    if train_set.is_empty() || splits.dev.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n_in = train_set.n_features();
    for (name, d) in [("dev", &splits.dev), ("test", &splits.test)] {
        if d.n_features() != n_in || d.norm != train_set.norm {
            return Err(Error::Shape(format!("{name} split does not match the training split")));
        }
    }
    let norm = train_set
        .norm
        .clone()
        .ok_or_else(|| Error::Schema("training data must be normalized".into()))?;

    let mut model = mlp::xavier_init(&mlp::network_dims(n_in), cfg.seed)?;
    let mut adam = AdamState::new(&model);
    let mut grads = Gradients::zeros_like(&model);
    let mut scratch = BackwardScratch::default();
    let mut cache = ForwardCache::default();
    let mut xb = Vec::with_capacity(cfg.batch_size * n_in);
    let mut yb = Vec::with_capacity(cfg.batch_size);
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let order = epoch_order(train_set.len(), cfg.seed, epoch);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            xb.clear();
            yb.clear();
            for &i in batch {
                xb.extend_from_slice(train_set.row(i));
                yb.push(train_set.label(i));
            }
            mlp::forward_into(&model, &xb, &mut cache)?;
            let (l, c) = mlp::score_batch(&cache, &yb);
            loss_sum += l;
            correct += c;
            mlp::backward_into(&model, &cache, &yb, &mut grads, &mut scratch)?;
            mlp::adam_step(&mut model, &grads, &mut adam, cfg)?;
        }
        if !model.all_finite() {
            return Err(Error::Numerical(format!("non-finite parameter after epoch {epoch}")));
        }
        let (dev_loss, dev_acc) = evaluate_epoch(&model, &splits.dev)?;
        let n = train_set.len() as f64;
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            dev_loss,
            dev_acc,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&m);
        epochs.push(m);
    }

    model.norm = Some(norm);
    model.grid = Some(train_set.grid.clone());
    let (train_loss, train_acc) = evaluate_epoch(&model, train_set)?;
    let (dev_loss, dev_acc) = evaluate_epoch(&model, &splits.dev)?;
    let (test_loss, test_acc) = if splits.test.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        evaluate_epoch(&model, &splits.test)?
    };
    let history = TrainHistory {
        epochs,
        final_metrics: FinalMetrics { train_loss, train_acc, dev_loss, dev_acc, test_loss, test_acc },
        config: cfg.clone(),
        seed: cfg.seed,
    };
    Ok((model, history))
}

/// Writes `epoch,train_loss,train_acc,dev_loss,dev_acc,seconds`. With
/// `with_timing == false` the `seconds` column is left empty so that
/// repeated runs produce identical files.
pub fn write_history<W: Write>(history: &TrainHistory, with_timing: bool, mut out: W) -> Result<()> {
    writeln!(out, "epoch,train_loss,train_acc,dev_loss,dev_acc,seconds")?;
    let mut buf = String::new();
    for m in &history.epochs {
        write!(out, "{}", m.epoch)?;
        for v in [m.train_loss, m.train_acc, m.dev_loss, m.dev_acc] {
            format_f64(v, &mut buf);
            write!(out, ",{buf}")?;
        }
        if with_timing {
            writeln!(out, ",{:.3}", m.seconds)?;
        } else {
            writeln!(out, ",")?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn save_history(history: &TrainHistory, with_timing: bool, path: &Path) -> Result<()> {
    write_history(history, with_timing, BufWriter::new(File::create(path)?))
}

/// On-disk model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub dims: Vec<usize>,
    /// Per layer, `fan_out` rows of `fan_in` weights.
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
    pub norm_max_abs: Vec<f64>,
    pub grid: FrequencyGrid,
    pub train_config: TrainConfig,
    pub final_metrics: FinalMetrics,
}

impl Checkpoint {
    pub fn from_model(model: &MlpModel, config: &TrainConfig, final_metrics: &FinalMetrics) -> Result<Self> {
        model.validate()?;
        let (norm, grid) = match (&model.norm, &model.grid) {
            (Some(n), Some(g)) => (n, g),
            _ => return Err(Error::Schema("model has no normalization stats or grid attached".into())),
        };
        Ok(Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            dims: model.dims.clone(),
            weights: model
                .layers
                .iter()
                .map(|l| l.weights.chunks(l.fan_in).map(<[f64]>::to_vec).collect())
                .collect(),
            biases: model.layers.iter().map(|l| l.biases.clone()).collect(),
            norm_max_abs: norm.max_abs.clone(),
            grid: grid.clone(),
            train_config: config.clone(),
            final_metrics: final_metrics.clone(),
        })
    }

    pub fn into_model(self) -> Result<MlpModel> {
        if self.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Schema(format!("unsupported checkpoint schema version {}", self.schema_version)));
        }
        let schema = |e: Error| Error::Schema(format!("checkpoint: {e}"));
        let mut model = MlpModel::zeros(&self.dims).map_err(schema)?;
        if self.weights.len() != model.layers.len() || self.biases.len() != model.layers.len() {
            return Err(Error::Schema("checkpoint layer count does not match dims".into()));
        }
        for (i, (layer, (w, b))) in model.layers.iter_mut().zip(self.weights.into_iter().zip(self.biases)).enumerate() {
            if w.len() != layer.fan_out || w.iter().any(|r| r.len() != layer.fan_in) || b.len() != layer.fan_out {
                return Err(Error::Schema(format!("layer {i} shape does not match dims {:?}", self.dims)));
            }
            *layer = Dense { fan_in: layer.fan_in, fan_out: layer.fan_out, weights: w.concat(), biases: b };
        }
        self.grid.validate()?;
        model.norm = Some(NormStats::new(self.norm_max_abs).map_err(schema)?);
        model.grid = Some(self.grid);
        model.validate().map_err(|e| match e {
            Error::Numerical(_) => e,
            other => schema(other),
        })?;
        Ok(model)
    }
}

pub fn save_checkpoint(model: &MlpModel, history: &TrainHistory, path: &Path) -> Result<()> {
    let ck = Checkpoint::from_model(model, &history.config, &history.final_metrics)?;
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, &ck)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(MlpModel, Checkpoint)> {
    let text = std::fs::read_to_string(path)?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Schema(format!("checkpoint: {e}")))?;
    let model = ck.clone().into_model()?;
    Ok((model, ck))
}
