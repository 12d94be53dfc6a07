//! Trials, datasets and their preparation for the network.

mod io;
mod split;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use io::{
    dataset_digest, decode_dataset, encode_dataset, labels_csv, load_dataset, save_dataset, write_ground_truth,
    write_labels_csv, DATASET_MAGIC, DATASET_VERSION,
};
pub use split::{iterate_cv, split_folds, FoldSplit};
pub use synthetic::{generate_synthetic, grid_block, Carrier, ClassSignature, SyntheticConfig};

pub const GRID_ROWS: usize = 8;
pub const GRID_COLS: usize = 16;
pub const N_CHANNELS: usize = GRID_ROWS * GRID_COLS;
pub const WINDOW: usize = 300;
pub const SAMPLE_RATE: f64 = 1000.0;
pub const CLASS_NAMES: [&str; 6] = ["building", "body part", "face", "fruit", "insect", "tool"];

/// Smallest background standard deviation accepted by [`normalize_trial`].
pub const MIN_BACKGROUND_STD: f64 = 1e-12;

/// One recording: channel-major `[channels, samples]` blocks for the
/// pre-stimulus background and the active interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub background: Vec<f32>,
    pub active: Vec<f32>,
    pub label: usize,
    pub subject: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Synthetic(SyntheticConfig),
    File { path: String, sha256: String },
    Derived(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub channels: usize,
    pub samples: usize,
    pub class_names: Vec<String>,
    pub trials: Vec<Trial>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn empty(channels: usize, samples: usize) -> Self {
        Dataset {
            channels,
            samples,
            class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            trials: Vec::new(),
            provenance: Provenance::Derived("empty".into()),
        }
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.trials.iter().map(|t| t.label).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let block = self.channels * self.samples;
        for (i, t) in self.trials.iter().enumerate() {
            if t.background.len() != block || t.active.len() != block {
                return Err(Error::Shape(format!(
                    "trial {i} does not hold {} x {} samples per interval",
                    self.channels, self.samples
                )));
            }
            if t.label >= self.n_classes() {
                return Err(Error::Input(format!(
                    "trial {i} has label {} but only {} classes exist",
                    t.label,
                    self.n_classes()
                )));
            }
        }
        Ok(())
    }

    /// A dataset holding clones of the trials at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            trials: indices.iter().map(|&i| self.trials[i].clone()).collect(),
            provenance: Provenance::Derived(format!("subset of {} trials", self.len())),
            ..self.header()
        }
    }

    /// Same shape and class names with no trials.
    pub fn header(&self) -> Dataset {
        Dataset {
            channels: self.channels,
            samples: self.samples,
            class_names: self.class_names.clone(),
            trials: Vec::new(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Scalar mean and population standard deviation over every background sample.
pub fn background_stats(background: &[f32]) -> (f64, f64) {
    let n = background.len() as f64;
    let mean = background.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = background
        .iter()
        .map(|&v| (v as f64 - mean) * (v as f64 - mean))
        .sum::<f64>()
        / n;
    (mean, var.sqrt())
}

/// Writes `(active - m) / s` into `out`, with `m` and `s` pooled over all
/// background channels and samples.
pub fn normalize_into(trial: &Trial, out: &mut [f32]) -> Result<()> {
    normalize_blocks(&trial.background, &trial.active, out)
}

/// [`normalize_into`] on bare interval blocks.
pub fn normalize_blocks(background: &[f32], active: &[f32], out: &mut [f32]) -> Result<()> {
    if background.is_empty() || out.len() != active.len() {
        return Err(Error::Shape(format!(
            "cannot normalise {} active samples into {}",
            active.len(),
            out.len()
        )));
    }
    let (mean, std) = background_stats(background);
    if !(std >= MIN_BACKGROUND_STD) {
        return Err(Error::DegenerateBackground { std });
    }
    for (o, &v) in out.iter_mut().zip(active) {
        *o = ((v as f64 - mean) / std) as f32;
    }
    Ok(())
}

/// Normalised active interval as `[1, channels, samples]`.
pub fn normalize_trial(trial: &Trial, channels: usize) -> Result<Tensor<f32>> {
    if channels == 0 || trial.active.len() % channels != 0 {
        return Err(Error::Shape(format!(
            "{} active samples do not split into {channels} channels",
            trial.active.len()
        )));
    }
    let mut out = vec![0.0; trial.active.len()];
    normalize_into(trial, &mut out)?;
    Tensor::from_vec(&[1, channels, trial.active.len() / channels], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trial(background: Vec<f32>, active: Vec<f32>) -> Trial {
        Trial {
            background,
            active,
            label: 0,
            subject: "t".into(),
        }
    }

    #[test]
    fn plus_minus_one_background() {
        let t = trial(vec![-1.0, 1.0, 1.0, -1.0], vec![3.0; 4]);
        let out = normalize_trial(&t, 2).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert!(out.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn constant_background_is_refused() {
        let t = trial(vec![5.0; 6], vec![1.0; 6]);
        assert!(matches!(
            normalize_trial(&t, 3),
            Err(Error::DegenerateBackground { .. })
        ));
    }

    #[test]
    fn subset_keeps_order() {
        let mut ds = Dataset::empty(1, 1);
        for label in 0..4 {
            ds.trials.push(Trial {
                label,
                ..trial(vec![0.0], vec![0.0])
            });
        }
        assert_eq!(ds.subset(&[3, 1]).labels(), vec![3, 1]);
    }
}
