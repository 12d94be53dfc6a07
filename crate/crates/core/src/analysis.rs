//! Importance tests on a trained model: band-pass sweeps, single-channel
//! ablation, cross-source evaluation and heat-map export.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{dataset_digest, normalize_blocks, Dataset, GRID_COLS, GRID_ROWS};
use crate::dsp::{design_bandpass, FilterSpec, ZeroPhaseFilter};
use crate::error::{Error, Result};
use crate::harness::{evaluate, prepare, PreparedSet};
use crate::model::Model;
use crate::tensor::{encode_checkpoint, write_atomic};

/// Trials per forward pass during evaluation.
pub const EVAL_BATCH: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportKind {
    Frequency,
    Channel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandAccuracy {
    pub f_lo: f64,
    pub f_hi: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub kind: ReportKind,
    /// Frequency reports: one entry per band, in bank order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bands: Vec<BandAccuracy>,
    /// Channel reports: accuracy drop `d = baseline - ablated`, row-major on the grid.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grid: Vec<Vec<f64>>,
    pub baseline_accuracy: f64,
    pub parameters: serde_json::Value,
    /// SHA-256 of the checkpoint encoding of the evaluated weights.
    pub model_sha256: String,
    /// SHA-256 of the dataset file encoding.
    pub dataset_sha256: String,
    pub timestamp: String,
}

impl ImportanceReport {
    /// Channel `16 * r + c` drop, read off the grid.
    pub fn channel_drop(&self, channel: usize) -> f64 {
        self.grid[channel / GRID_COLS][channel % GRID_COLS]
    }

    pub fn channel_drops(&self) -> Vec<f64> {
        self.grid.iter().flatten().copied().collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn model_digest(model: &Model<f32>) -> Result<String> {
    Ok(hex::encode(Sha256::digest(encode_checkpoint(&model.to_named_arrays())?)))
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn require_trials(dataset: &Dataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Input("importance tests need at least one trial".into()));
    }
    Ok(())
}

/// Band-passes both intervals of every trial, then normalises as usual.
pub fn filtered_set(dataset: &Dataset, filter: &ZeroPhaseFilter) -> Result<PreparedSet> {
    let block = dataset.channels * dataset.samples;
    let mut data = vec![0.0f32; dataset.len() * block];
    let mut background = vec![0.0f32; block];
    let mut active = vec![0.0f32; block];
    for (trial, out) in dataset.trials.iter().zip(data.chunks_exact_mut(block)) {
        background.copy_from_slice(&trial.background);
        active.copy_from_slice(&trial.active);
        filter.apply_rows(&mut background)?;
        filter.apply_rows(&mut active)?;
        normalize_blocks(&background, &active, out)?;
    }
    Ok(PreparedSet {
        data,
        labels: dataset.labels(),
        channels: dataset.channels,
        samples: dataset.samples,
    })
}

/// Accuracy of `model` on `dataset` after band-passing with each filter of `bank`.
pub fn frequency_importance(
    model: &Model<f32>,
    dataset: &Dataset,
    bank: &[FilterSpec],
) -> Result<ImportanceReport> {
    require_trials(dataset)?;
    let baseline = evaluate(model, &prepare(dataset)?, EVAL_BATCH)?;
    let mut bands = Vec::with_capacity(bank.len());
    for spec in bank {
        let h = design_bandpass(spec)?;
        let filter = ZeroPhaseFilter::new(&h, dataset.samples)?;
        let accuracy = evaluate(model, &filtered_set(dataset, &filter)?, EVAL_BATCH)?;
        bands.push(BandAccuracy {
            f_lo: spec.f_lo,
            f_hi: spec.f_hi,
            accuracy,
        });
    }
    let (taps, rate) = bank.first().map_or((0, 0.0), |s| (s.n_taps, s.sample_rate));
    Ok(ImportanceReport {
        kind: ReportKind::Frequency,
        bands,
        grid: Vec::new(),
        baseline_accuracy: baseline,
        parameters: serde_json::json!({
            "filtered_intervals": "background and active",
            "renormalized_after_filtering": true,
            "phase": "zero (forward-backward)",
            "n_taps": taps,
            "sample_rate": rate,
            "bands": bank.len(),
        }),
        model_sha256: model_digest(model)?,
        dataset_sha256: dataset_digest(dataset)?,
        timestamp: now(),
    })
}

/// Zeroes channel `channel` of every normalised trial.
pub fn zero_channel(set: &mut PreparedSet, channel: usize) {
    let samples = set.samples;
    for i in 0..set.len() {
        set.trial_mut(i)[channel * samples..(channel + 1) * samples].fill(0.0);
    }
}

/// Accuracy drop from zeroing each channel in turn, after normalisation.
pub fn channel_importance(model: &Model<f32>, dataset: &Dataset) -> Result<ImportanceReport> {
    require_trials(dataset)?;
    if dataset.channels != GRID_ROWS * GRID_COLS {
        return Err(Error::Shape(format!(
            "channel report needs {} channels, dataset has {}",
            GRID_ROWS * GRID_COLS,
            dataset.channels
        )));
    }
    let prepared = prepare(dataset)?;
    let baseline = evaluate(model, &prepared, EVAL_BATCH)?;
    let mut drops = Vec::with_capacity(dataset.channels);
    let mut ablated = prepared.clone();
    for ch in 0..dataset.channels {
        zero_channel(&mut ablated, ch);
        drops.push(baseline - evaluate(model, &ablated, EVAL_BATCH)?);
        let samples = prepared.samples;
        for i in 0..prepared.len() {
            ablated.trial_mut(i)[ch * samples..(ch + 1) * samples]
                .copy_from_slice(&prepared.trial(i)[ch * samples..(ch + 1) * samples]);
        }
    }
    Ok(ImportanceReport {
        kind: ReportKind::Channel,
        bands: Vec::new(),
        grid: drops.chunks(GRID_COLS).map(<[f64]>::to_vec).collect(),
        baseline_accuracy: baseline,
        parameters: serde_json::json!({
            "ablation": "channel set to 0 after normalization",
            "layout": "row-major, channel = 16 * row + col",
            "evaluated_on": "held-out trials supplied by the caller",
        }),
        model_sha256: model_digest(model)?,
        dataset_sha256: dataset_digest(dataset)?,
        timestamp: now(),
    })
}

/// `sum(acc_i * centre_i) / sum(acc_i)` over the bands of a frequency report.
pub fn accuracy_weighted_mean_frequency(report: &ImportanceReport) -> f64 {
    let (num, den) = report.bands.iter().fold((0.0, 0.0), |(n, d), b| {
        (n + b.accuracy * (b.f_lo + b.f_hi) / 2.0, d + b.accuracy)
    });
    num / den
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSubjectMatrix {
    pub sources: Vec<String>,
    /// `accuracy[i][j]`: model trained on source `i`, tested on source `j`.
    pub accuracy: Vec<Vec<f64>>,
}

/// Every model against every held-out set. `test_sets[i]` must be disjoint
/// from the trials `models[i]` was trained on so the diagonal is honest.
pub fn cross_subject_eval(
    sources: &[String],
    models: &[Model<f32>],
    test_sets: &[Dataset],
) -> Result<CrossSubjectMatrix> {
    if models.len() != test_sets.len() || models.len() != sources.len() || models.len() < 2 {
        return Err(Error::Input(format!(
            "{} sources, {} models and {} test sets: need matching counts of at least 2",
            sources.len(),
            models.len(),
            test_sets.len()
        )));
    }
    for (name, (m, ds)) in sources.iter().zip(models.iter().zip(test_sets)) {
        if m.config().n_channels() != ds.channels || m.config().t_active != ds.samples {
            return Err(Error::Shape(format!(
                "source {name}: model expects {} x {}, data is {} x {}",
                m.config().n_channels(),
                m.config().t_active,
                ds.channels,
                ds.samples
            )));
        }
    }
    let prepared = test_sets.iter().map(prepare).collect::<Result<Vec<_>>>()?;
    let accuracy = models
        .iter()
        .map(|m| prepared.iter().map(|p| evaluate(m, p, EVAL_BATCH)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(CrossSubjectMatrix {
        sources: sources.to_vec(),
        accuracy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapFormat {
    Csv,
    Pgm,
    Both,
}

pub fn heatmap_csv(grid: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for row in grid {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", cells.join(",")).expect("string write");
    }
    out
}

pub fn parse_heatmap_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Format(format!("heat-map cell {c:?} is not a number")))
                })
                .collect()
        })
        .collect()
}

/// Plain PGM, min-max scaled so the largest drop is black; a constant grid is mid-gray.
pub fn heatmap_pgm(grid: &[Vec<f64>]) -> String {
    let values: Vec<f64> = grid.iter().flatten().copied().collect();
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let width = grid.first().map_or(0, Vec::len);
    let mut out = format!("P2\n{width} {}\n255\n", grid.len());
    for row in grid {
        let px: Vec<String> = row
            .iter()
            .map(|&v| {
                let level = if hi > lo { 255.0 * (1.0 - (v - lo) / (hi - lo)) } else { 128.0 };
                (level.round() as u8).to_string()
            })
            .collect();
        writeln!(out, "{}", px.join(" ")).expect("string write");
    }
    out
}

/// Writes `<stem>.csv` and/or `<stem>.pgm` and returns the paths written.
pub fn export_heatmap(report: &ImportanceReport, stem: &Path, format: HeatmapFormat) -> Result<Vec<PathBuf>> {
    if report.kind != ReportKind::Channel {
        return Err(Error::Input("heat maps are drawn from channel reports".into()));
    }
    let mut written = Vec::new();
    if matches!(format, HeatmapFormat::Csv | HeatmapFormat::Both) {
        let p = stem.with_extension("csv");
        write_atomic(&p, heatmap_csv(&report.grid).as_bytes())?;
        written.push(p);
    }
    if matches!(format, HeatmapFormat::Pgm | HeatmapFormat::Both) {
        let p = stem.with_extension("pgm");
        write_atomic(&p, heatmap_pgm(&report.grid).as_bytes())?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_scaling() {
        let grid = vec![vec![0.0, 0.5, 1.0]];
        assert_eq!(heatmap_pgm(&grid), "P2\n3 1\n255\n255 128 0\n");
        let flat = vec![vec![0.2; 3]; 2];
        assert!(heatmap_pgm(&flat).ends_with("128 128 128\n128 128 128\n"));
    }

    #[test]
    fn weighted_mean_frequency() {
        let report = ImportanceReport {
            kind: ReportKind::Frequency,
            bands: vec![
                BandAccuracy { f_lo: 1.0, f_hi: 6.0, accuracy: 0.75 },
                BandAccuracy { f_lo: 4.0, f_hi: 9.0, accuracy: 0.25 },
            ],
            grid: Vec::new(),
            baseline_accuracy: 0.0,
            parameters: serde_json::Value::Null,
            model_sha256: String::new(),
            dataset_sha256: String::new(),
            timestamp: String::new(),
        };
        assert_eq!(accuracy_weighted_mean_frequency(&report), 0.75 * 3.5 + 0.25 * 6.5);
    }
}
