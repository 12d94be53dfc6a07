//! Training loop, cross-validation driver and epoch benchmark.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{iterate_cv, normalize_into, split_folds, Dataset, FoldSplit};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::ops::{softmax_cross_entropy, Mode};
use crate::tensor::{adam_step, no_grad, write_atomic, AdamConfig, AdamState, Tensor, WeightDecay};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay_mode: WeightDecay,
    pub seed: u64,
    pub shuffle: bool,
    /// Test accuracy is measured every `eval_every` epochs and after the last.
    pub eval_every: usize,
}

impl TrainConfig {
    /// 400 epochs of Adam at lr 1.5e-6 with weight decay 1e-4, batch 128.
    pub fn paper() -> Self {
        TrainConfig {
            epochs: 400,
            batch_size: 128,
            lr: 1.5e-6,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_mode: WeightDecay::Coupled,
            seed: 0,
            shuffle: true,
            eval_every: 1,
        }
    }

    /// Short schedule with a raised learning rate for synthetic data sets of
    /// a few hundred trials.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 60,
            lr: 1e-3,
            eval_every: 10,
            ..TrainConfig::paper()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(TrainConfig::paper()),
            "desk" => Ok(TrainConfig::desk()),
            other => Err(Error::Usage(format!("unknown preset {other:?} (expected paper or desk)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("epochs, batch size and eval interval must be positive".into()));
        }
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.lr) || !finite_nonneg(self.weight_decay) || !(self.eps > 0.0) {
            return Err(Error::Config("lr and weight decay must be finite and non-negative, eps positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            decay_mode: self.decay_mode,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::paper()
    }
}

/// Normalised trials ready for batching: `[n, 1, channels, samples]` plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSet {
    pub data: Vec<f32>,
    pub labels: Vec<usize>,
    pub channels: usize,
    pub samples: usize,
}

impl PreparedSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn block(&self) -> usize {
        self.channels * self.samples
    }

    pub fn trial(&self, i: usize) -> &[f32] {
        &self.data[i * self.block()..(i + 1) * self.block()]
    }

    pub fn trial_mut(&mut self, i: usize) -> &mut [f32] {
        let b = self.block();
        &mut self.data[i * b..(i + 1) * b]
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let mut data = Vec::with_capacity(indices.len() * self.block());
        for &i in indices {
            data.extend_from_slice(self.trial(i));
        }
        Tensor::from_vec(&[indices.len(), 1, self.channels, self.samples], data)
    }

    pub fn subset(&self, indices: &[usize]) -> PreparedSet {
        let mut data = Vec::with_capacity(indices.len() * self.block());
        for &i in indices {
            data.extend_from_slice(self.trial(i));
        }
        PreparedSet {
            data,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            channels: self.channels,
            samples: self.samples,
        }
    }
}

/// Normalises every trial of `dataset` against its own background.
pub fn prepare(dataset: &Dataset) -> Result<PreparedSet> {
    dataset.validate()?;
    let block = dataset.channels * dataset.samples;
    let mut data = vec![0.0; dataset.len() * block];
    for (trial, out) in dataset.trials.iter().zip(data.chunks_exact_mut(block.max(1))) {
        normalize_into(trial, out)?;
    }
    Ok(PreparedSet {
        data,
        labels: dataset.labels(),
        channels: dataset.channels,
        samples: dataset.samples,
    })
}

fn argmax_rows(logits: &[f32], classes: usize) -> impl Iterator<Item = usize> + '_ {
    logits.chunks_exact(classes).map(|row| {
        row.iter()
            .enumerate()
            .fold((0, f32::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
            .0
    })
}

/// Eval-mode class predictions, `batch_size` trials at a time.
pub fn predict(model: &Model<f32>, set: &PreparedSet, batch_size: usize) -> Result<Vec<usize>> {
    let classes = model.config().n_classes;
    let order: Vec<usize> = (0..set.len()).collect();
    no_grad(|| {
        let mut out = Vec::with_capacity(set.len());
        for chunk in order.chunks(batch_size.max(1)) {
            let logits = model.forward(&set.batch(chunk)?, Mode::Eval)?;
            out.extend(argmax_rows(logits.data(), classes));
        }
        Ok(out)
    })
}

pub fn evaluate(model: &Model<f32>, set: &PreparedSet, batch_size: usize) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty set".into()));
    }
    let predictions = predict(model, set, batch_size)?;
    let correct = predictions.iter().zip(&set.labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / set.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    /// Running accuracy of the train-mode forward passes during the epoch.
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub epochs: Vec<EpochMetrics>,
    pub final_test_accuracy: Option<f64>,
}

/// Trains `model` in place with Adam on softmax cross-entropy.
///
/// Batches follow a permutation drawn from `cfg.seed` every epoch; the final
/// partial batch is kept. `on_epoch` sees each epoch's metrics as soon as
/// they exist.
pub fn train(
    model: &mut Model<f32>,
    train_set: &PreparedSet,
    test_set: Option<&PreparedSet>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<RunMetrics> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let adam = cfg.adam();
    let classes = model.config().n_classes;
    let mut state = AdamState::new(model.params().iter().map(|p| p.numel()));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut run = RunMetrics {
        epochs: Vec::with_capacity(cfg.epochs),
        final_test_accuracy: None,
    };

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let logits = model.forward(&train_set.batch(chunk)?, Mode::Train)?;
            let loss = softmax_cross_entropy(&logits, &labels)?;
            let value = loss.item()? as f64;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            loss.backward()?;
            let params = model.params();
            let grads: Vec<Vec<f32>> = params
                .iter()
                .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
                .collect();
            let mut values: Vec<Vec<f32>> = params.iter().map(|p| p.to_vec()).collect();
            adam_step(&mut values, &grads, &mut state, &adam)?;
            model.set_param_values(values)?;

            loss_sum += value * chunk.len() as f64;
            correct += argmax_rows(logits.data(), classes)
                .zip(&labels)
                .filter(|(p, l)| p == *l)
                .count();
        }
        let last = epoch + 1 == cfg.epochs;
        let test_accuracy = match test_set {
            Some(t) if !t.is_empty() && (last || (epoch + 1) % cfg.eval_every == 0) => {
                Some(evaluate(model, t, cfg.batch_size)?)
            }
            _ => None,
        };
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            test_accuracy,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&metrics);
        if last {
            run.final_test_accuracy = test_accuracy;
        }
        run.epochs.push(metrics);
    }
    Ok(run)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvMetrics {
    pub folds: Vec<RunMetrics>,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

pub struct CvOutcome {
    pub metrics: CvMetrics,
    pub split: FoldSplit,
    pub models: Vec<Model<f32>>,
}

/// NDJSON lines for one fold: a `train` record per epoch and a `test` record
/// whenever test accuracy was measured.
pub fn metrics_ndjson(fold: Option<usize>, run: &RunMetrics) -> String {
    let mut out = String::new();
    for e in &run.epochs {
        let record = serde_json::json!({
            "fold": fold,
            "epoch": e.epoch,
            "split": "train",
            "loss": e.train_loss,
            "accuracy": e.train_accuracy,
            "seconds": e.seconds,
        });
        writeln!(out, "{record}").expect("string write");
        if let Some(acc) = e.test_accuracy {
            let record = serde_json::json!({
                "fold": fold,
                "epoch": e.epoch,
                "split": "test",
                "loss": null,
                "accuracy": acc,
                "seconds": e.seconds,
            });
            writeln!(out, "{record}").expect("string write");
        }
    }
    out
}

pub fn checkpoint_path(dir: &Path, fold: usize) -> PathBuf {
    dir.join(format!("fold{fold}.bben"))
}

/// `k`-fold cross-validation. Fold `f` trains a fresh model seeded with
/// `seed + f` and shuffles with the same seed. With `out`, writes
/// `fold{f}.bben`, `fold{f}.cfg`, `metrics.ndjson` and `cv.json`.
pub fn run_cv(
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    k: usize,
    out: Option<&Path>,
) -> Result<CvOutcome> {
    let prepared = prepare(dataset)?;
    run_cv_prepared(&prepared, model_cfg, cfg, k, out)
}

pub fn run_cv_prepared(
    prepared: &PreparedSet,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    k: usize,
    out: Option<&Path>,
) -> Result<CvOutcome> {
    model_cfg.validate()?;
    cfg.validate()?;
    let split = split_folds(&prepared.labels, k, cfg.seed)?;
    let mut runs = Vec::with_capacity(k);
    let mut models = Vec::with_capacity(k);
    let mut ndjson = String::new();
    for (fold, (train_idx, test_idx)) in iterate_cv(&split).into_iter().enumerate() {
        let seed = cfg.seed + fold as u64;
        let fold_cfg = TrainConfig { seed, ..cfg.clone() };
        let mut model = Model::<f32>::new(model_cfg.clone(), seed)?;
        let run = train(
            &mut model,
            &prepared.subset(&train_idx),
            Some(&prepared.subset(&test_idx)),
            &fold_cfg,
            |_| {},
        )?;
        if let Some(dir) = out {
            model.save(&checkpoint_path(dir, fold))?;
            model_cfg.save(&dir.join(format!("fold{fold}.cfg")))?;
        }
        ndjson.push_str(&metrics_ndjson(Some(fold), &run));
        runs.push(run);
        models.push(model);
    }
    let fold_accuracies: Vec<f64> = runs
        .iter()
        .map(|r| r.final_test_accuracy.expect("every fold has a test set"))
        .collect();
    let (mean_accuracy, std_accuracy) = mean_std(&fold_accuracies);
    let metrics = CvMetrics {
        folds: runs,
        fold_accuracies,
        mean_accuracy,
        std_accuracy,
    };
    if let Some(dir) = out {
        write_atomic(&dir.join("metrics.ndjson"), ndjson.as_bytes())?;
        let summary = serde_json::json!({
            "fold_accuracies": metrics.fold_accuracies,
            "mean_accuracy": metrics.mean_accuracy,
            "std_accuracy": metrics.std_accuracy,
            "split": split,
        });
        write_atomic(&dir.join("cv.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    }
    Ok(CvOutcome {
        metrics,
        split,
        models,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochBenchmark {
    pub trials: usize,
    pub batch_size: usize,
    pub epoch_seconds: Vec<f64>,
    pub median_seconds: f64,
}

/// Median wall-clock of `measured` (at least 3) training epochs over
/// `set`, after one unmeasured warm-up epoch.
pub fn benchmark_epoch(
    model_cfg: &ModelConfig,
    set: &PreparedSet,
    batch_size: usize,
    measured: usize,
    seed: u64,
) -> Result<EpochBenchmark> {
    let measured = measured.max(3);
    let mut model = Model::<f32>::new(model_cfg.clone(), seed)?;
    let cfg = TrainConfig {
        epochs: measured + 1,
        batch_size,
        lr: 1e-4,
        seed,
        ..TrainConfig::paper()
    };
    let run = train(&mut model, set, None, &cfg, |_| {})?;
    let epoch_seconds: Vec<f64> = run.epochs[1..].iter().map(|e| e.seconds).collect();
    let mut sorted = epoch_seconds.clone();
    sorted.sort_by(f64::total_cmp);
    let median_seconds = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2]) / 2.0
    };
    Ok(EpochBenchmark {
        trials: set.len(),
        batch_size,
        epoch_seconds,
        median_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregation_hand_arithmetic() {
        let (m, s) = mean_std(&[0.5, 0.6, 0.5, 0.6, 0.55]);
        assert!((m - 0.55).abs() < 1e-12);
        assert!((s - 0.002f64.sqrt()).abs() < 1e-12);
        assert!((s - 0.0447).abs() < 1e-4);
        assert_eq!(mean_std(&[0.25; 5]), (0.25, 0.0));
    }

    #[test]
    fn presets() {
        let p = TrainConfig::preset("paper").unwrap();
        assert_eq!((p.epochs, p.batch_size, p.lr, p.weight_decay), (400, 128, 1.5e-6, 1e-4));
        assert_eq!((p.beta1, p.beta2), (0.9, 0.999));
        assert!(matches!(TrainConfig::preset("fast"), Err(Error::Usage(_))));
    }

    #[test]
    fn argmax_prefers_first_maximum() {
        let picks: Vec<usize> = argmax_rows(&[1.0, 3.0, 3.0, 0.0, -1.0, -2.0], 3).collect();
        assert_eq!(picks, vec![1, 0]);
    }
}
