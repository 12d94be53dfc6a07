use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{Dataset, Provenance, Trial, CLASS_NAMES, GRID_COLS, GRID_ROWS, SAMPLE_RATE, WINDOW};
use crate::error::{Error, Result};

/// A band-limited oscillation: the sum of several unit sinusoids at random
/// frequencies inside `band` with random phases, scaled to RMS `amplitude`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Carrier {
    pub band: (f64, f64),
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSignature {
    /// Channel indices (`16 * row + col` on the electrode grid).
    pub electrodes: Vec<usize>,
    pub carriers: Vec<Carrier>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub classes: Vec<ClassSignature>,
    /// Standard deviation of the 1/f component on every channel.
    pub pink_std: f64,
    /// Standard deviation of the white floor on every channel.
    pub white_std: f64,
    pub trials_per_class: usize,
    pub seed: u64,
    pub subject: String,
    pub channels: usize,
    pub samples: usize,
    /// Sinusoids per carrier.
    pub tones: usize,
    /// Fraction of the active interval covered by the cosine tapers.
    pub taper: f64,
}

/// Channels of the `rows x cols` block whose top-left electrode is `(row, col)`.
pub fn grid_block(row: usize, col: usize, rows: usize, cols: usize) -> Vec<usize> {
    (row..row + rows)
        .flat_map(|r| (col..col + cols).map(move |c| r * GRID_COLS + c))
        .collect()
}

impl Default for SyntheticConfig {
    /// Six classes with disjoint 2x2 electrode patches and 10-20 Hz carriers.
    fn default() -> Self {
        let corners = [(1, 1), (1, 6), (1, 11), (5, 1), (5, 6), (5, 11)];
        SyntheticConfig {
            classes: corners
                .iter()
                .map(|&(r, c)| ClassSignature {
                    electrodes: grid_block(r, c, 2, 2),
                    carriers: vec![Carrier {
                        band: (10.0, 20.0),
                        amplitude: 1.0,
                    }],
                })
                .collect(),
            pink_std: 1.0,
            white_std: 0.1,
            trials_per_class: 100,
            seed: 0,
            subject: "synthetic".into(),
            channels: GRID_ROWS * GRID_COLS,
            samples: WINDOW,
            tones: 6,
            taper: 0.2,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() || self.classes.len() > CLASS_NAMES.len() {
            return Err(Error::Config(format!(
                "{} classes requested; between 1 and {} are supported",
                self.classes.len(),
                CLASS_NAMES.len()
            )));
        }
        if self.channels == 0 || self.samples == 0 || self.tones == 0 {
            return Err(Error::Config("channels, samples and tones must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.taper) {
            return Err(Error::Config(format!("taper {} is outside [0, 1]", self.taper)));
        }
        if !(self.pink_std >= 0.0 && self.white_std >= 0.0) || self.pink_std + self.white_std == 0.0 {
            return Err(Error::Config("noise levels must be non-negative and not both zero".into()));
        }
        let nyquist = SAMPLE_RATE / 2.0;
        for (k, class) in self.classes.iter().enumerate() {
            if class.electrodes.is_empty() {
                return Err(Error::Config(format!("class {k} has an empty signature")));
            }
            if let Some(&e) = class.electrodes.iter().find(|&&e| e >= self.channels) {
                return Err(Error::Config(format!("class {k} electrode {e} is off the grid")));
            }
            for c in &class.carriers {
                if !(c.band.0 > 0.0 && c.band.0 <= c.band.1 && c.band.1 < nyquist) {
                    return Err(Error::Config(format!(
                        "class {k} carrier band {:?} must lie inside (0, {nyquist}) Hz",
                        c.band
                    )));
                }
                if !(c.amplitude >= 0.0 && c.amplitude.is_finite()) {
                    return Err(Error::Config(format!("class {k} amplitude {} is invalid", c.amplitude)));
                }
            }
        }
        Ok(())
    }
}

/// Tukey window: flat in the middle, raised-cosine tapers over `taper * n` samples.
fn tukey(n: usize, taper: f64) -> Vec<f64> {
    let edge = taper * (n as f64 - 1.0) / 2.0;
    (0..n)
        .map(|i| {
            let x = i as f64;
            let d = x.min(n as f64 - 1.0 - x);
            if edge <= 0.0 || d >= edge {
                1.0
            } else {
                0.5 * (1.0 - (PI * d / edge).cos())
            }
        })
        .collect()
}

/// Draws 1/f (pink) noise of unit variance by shaping a complex Gaussian spectrum.
struct PinkNoise {
    len: usize,
    gains: Vec<f64>,
    inverse: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl PinkNoise {
    fn new(len: usize) -> Self {
        let half = len / 2;
        let mut gains: Vec<f64> = (0..=half)
            .map(|k| if k == 0 { 0.0 } else { 1.0 / (k as f64).sqrt() })
            .collect();
        // Variance of x[t] is (1/n^2) sum over all bins of E|X_k|^2.
        let var: f64 = (1..=half)
            .map(|k| {
                // A mirrored pair contributes two bins of E|X|^2 = 2 g^2 each.
                let g2 = gains[k] * gains[k];
                if k != len - k {
                    4.0 * g2
                } else {
                    g2
                }
            })
            .sum::<f64>()
            / (len as f64 * len as f64);
        let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
        gains.iter_mut().for_each(|g| *g *= scale);
        PinkNoise {
            len,
            gains,
            inverse: FftPlanner::new().plan_fft_inverse(len),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng, buf: &mut Vec<Complex<f64>>) {
        let n = self.len;
        buf.clear();
        buf.resize(n, Complex::new(0.0, 0.0));
        for k in 1..=n / 2 {
            let g = self.gains[k];
            if k == n - k {
                let a: f64 = rng.sample(StandardNormal);
                buf[k] = Complex::new(g * a, 0.0);
            } else {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                buf[k] = Complex::new(g * a, g * b);
                buf[n - k] = buf[k].conj();
            }
        }
        self.inverse.process(buf);
        let inv_n = 1.0 / n as f64;
        buf.iter_mut().for_each(|c| c.re *= inv_n);
    }
}

/// Generates `trials_per_class` trials for each class, interleaved by class.
///
/// Both intervals of every channel carry one continuous stretch of 1/f noise
/// plus a white floor; each class adds its carriers to its signature
/// electrodes during the active interval only. The configuration travels
/// with the dataset as ground truth.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let (channels, samples) = (cfg.channels, cfg.samples);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pink = PinkNoise::new(2 * samples);
    let window = tukey(samples, cfg.taper);
    let mut spectrum = Vec::new();
    let mut carrier = vec![0.0f64; samples];
    let mut trials = Vec::with_capacity(cfg.trials_per_class * cfg.classes.len());

    for _ in 0..cfg.trials_per_class {
        for (label, class) in cfg.classes.iter().enumerate() {
            let mut background = vec![0.0f32; channels * samples];
            let mut active = vec![0.0f32; channels * samples];
            for ch in 0..channels {
                if cfg.pink_std > 0.0 {
                    pink.sample(&mut rng, &mut spectrum);
                }
                for t in 0..2 * samples {
                    let p = if cfg.pink_std > 0.0 { cfg.pink_std * spectrum[t].re } else { 0.0 };
                    let w: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.white_std;
                    let v = (p + w) as f32;
                    if t < samples {
                        background[ch * samples + t] = v;
                    } else {
                        active[ch * samples + t - samples] = v;
                    }
                }
            }

            carrier.iter_mut().for_each(|v| *v = 0.0);
            for c in &class.carriers {
                let gain = c.amplitude * (2.0 / cfg.tones as f64).sqrt();
                for _ in 0..cfg.tones {
                    let f = rng.random_range(c.band.0..=c.band.1);
                    let phase = rng.random_range(0.0..2.0 * PI);
                    for (t, v) in carrier.iter_mut().enumerate() {
                        *v += gain * (2.0 * PI * f * t as f64 / SAMPLE_RATE + phase).sin();
                    }
                }
            }
            for &e in &class.electrodes {
                let row = &mut active[e * samples..(e + 1) * samples];
                for ((a, c), w) in row.iter_mut().zip(&carrier).zip(&window) {
                    *a += (c * w) as f32;
                }
            }
            trials.push(Trial {
                background,
                active,
                label,
                subject: cfg.subject.clone(),
            });
        }
    }

    Ok(Dataset {
        channels,
        samples,
        class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        trials,
        provenance: Provenance::Synthetic(cfg.clone()),
    })
}
