//! Linear-phase FIR band-pass design and zero-phase application.
//!
//! Filters are type-I (odd length, symmetric) least-squares designs. A
//! signal is filtered forward and backward, which squares the magnitude
//! response and cancels the phase; this is done in one pass by convolving
//! with `h * h` through an FFT after mirror-padding both ends.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{write_atomic, Element, Tensor};

pub const DEFAULT_TAPS: usize = 501;
pub const DEFAULT_SAMPLE_RATE: f64 = 1000.0;
/// Width of the don't-care region on each side of the passband in the design.
pub const DESIGN_TRANSITION_HZ: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub f_lo: f64,
    pub f_hi: f64,
    pub sample_rate: f64,
    pub n_taps: usize,
}

impl FilterSpec {
    pub fn new(f_lo: f64, f_hi: f64) -> Self {
        FilterSpec {
            f_lo,
            f_hi,
            sample_rate: DEFAULT_SAMPLE_RATE,
            n_taps: DEFAULT_TAPS,
        }
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate / 2.0
    }

    pub fn center(&self) -> f64 {
        (self.f_lo + self.f_hi) / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::Design(format!("sample rate {} is not positive", self.sample_rate)));
        }
        if !(self.f_lo > 0.0 && self.f_lo < self.f_hi && self.f_hi < self.nyquist()) {
            return Err(Error::Design(format!(
                "band ({}, {}) Hz must satisfy 0 < f_lo < f_hi < {} Hz",
                self.f_lo,
                self.f_hi,
                self.nyquist()
            )));
        }
        if self.n_taps < 3 || self.n_taps % 2 == 0 {
            return Err(Error::Design(format!(
                "{} taps: a linear-phase band-pass needs an odd length of at least 3",
                self.n_taps
            )));
        }
        Ok(())
    }
}

/// Sweep schedule: bands `(f, f + width)` for `f = start, start + step, ...`
/// while `f < limit`.
pub fn filter_bank_schedule(start: f64, width: f64, step: f64, limit: f64) -> Vec<FilterSpec> {
    let mut bank = Vec::new();
    let mut f = start;
    while f < limit {
        bank.push(FilterSpec::new(f, f + width));
        f += step;
    }
    bank
}

/// The default sweep: 5 Hz bands starting at 1 Hz, advancing by 3 Hz below 300 Hz.
pub fn build_filter_bank() -> Vec<FilterSpec> {
    filter_bank_schedule(1.0, 5.0, 3.0, 300.0)
}

/// `integral of cos(m w) dw` over `[w1, w2]`.
fn cos_integral(m: f64, w1: f64, w2: f64) -> f64 {
    if m == 0.0 {
        w2 - w1
    } else {
        ((m * w2).sin() - (m * w1).sin()) / m
    }
}

/// Least-squares band-pass: minimises the integrated squared error between
/// the amplitude response and 1 on the passband and 0 on both stopbands,
/// ignoring `DESIGN_TRANSITION_HZ` on each side of the passband.
pub fn design_bandpass(spec: &FilterSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let half = (spec.n_taps - 1) / 2;
    let to_w = |f: f64| 2.0 * PI * f / spec.sample_rate;
    let lower_edge = if spec.f_lo > DESIGN_TRANSITION_HZ {
        spec.f_lo - DESIGN_TRANSITION_HZ
    } else {
        spec.f_lo / 2.0
    };
    let mut bands = vec![(0.0, to_w(lower_edge), 0.0), (to_w(spec.f_lo), to_w(spec.f_hi), 1.0)];
    let upper_edge = spec.f_hi + DESIGN_TRANSITION_HZ;
    if upper_edge < spec.nyquist() {
        bands.push((to_w(upper_edge), PI, 0.0));
    }

    let n = half + 1;
    let q = DMatrix::from_fn(n, n, |k, l| {
        bands
            .iter()
            .map(|&(w1, w2, _)| {
                0.5 * (cos_integral(k as f64 - l as f64, w1, w2) + cos_integral((k + l) as f64, w1, w2))
            })
            .sum::<f64>()
    });
    let b = DVector::from_fn(n, |k, _| {
        bands
            .iter()
            .filter(|band| band.2 != 0.0)
            .map(|&(w1, w2, d)| d * cos_integral(k as f64, w1, w2))
            .sum::<f64>()
    });
    let a = q
        .cholesky()
        .ok_or_else(|| Error::Design("least-squares normal equations are not positive definite".into()))?
        .solve(&b);

    let mut h = vec![0.0; spec.n_taps];
    h[half] = a[0];
    for k in 1..=half {
        h[half - k] = a[k] / 2.0;
        h[half + k] = a[k] / 2.0;
    }
    Ok(h)
}

/// `|H(f)|` of coefficients `h` at frequency `f`.
pub fn magnitude_response(h: &[f64], f: f64, sample_rate: f64) -> f64 {
    let w = 2.0 * PI * f / sample_rate;
    let (re, im) = h.iter().enumerate().fold((0.0, 0.0), |(re, im), (n, &c)| {
        let phase = w * n as f64;
        (re + c * phase.cos(), im - c * phase.sin())
    });
    re.hypot(im)
}

/// Coefficients as CSV: a comment header with the spec, a column name, then
/// one coefficient per line in shortest round-trip form.
pub fn coefficients_csv(spec: &FilterSpec, h: &[f64]) -> String {
    let mut out = format!(
        "# f_lo={},f_hi={},sample_rate={},n_taps={},design=least-squares\ncoefficient\n",
        spec.f_lo, spec.f_hi, spec.sample_rate, spec.n_taps
    );
    for c in h {
        writeln!(out, "{c}").expect("string write");
    }
    out
}

pub fn write_coefficients(path: &Path, spec: &FilterSpec, h: &[f64]) -> Result<()> {
    write_atomic(path, coefficients_csv(spec, h).as_bytes())
}

/// Mirror index without repeating the edge sample (`d c b | a b c d | c b a`).
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    (if m < len as isize { m } else { period - m }) as usize
}

type FftPair = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

fn fft_pair(size: usize) -> FftPair {
    static PLANS: Mutex<Option<HashMap<usize, FftPair>>> = Mutex::new(None);
    let mut guard = PLANS.lock().expect("fft plan cache");
    guard
        .get_or_insert_with(HashMap::new)
        .entry(size)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            (planner.plan_fft_forward(size), planner.plan_fft_inverse(size))
        })
        .clone()
}

/// Forward-backward application of one FIR filter to rows of a fixed length.
pub struct ZeroPhaseFilter {
    t_len: usize,
    pad: usize,
    /// Index of the centre tap of `h * h`.
    center: usize,
    size: usize,
    spectrum: Vec<Complex<f64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl ZeroPhaseFilter {
    /// Pads each end by `ceil(n_taps / 2)` mirrored samples.
    pub fn new(h: &[f64], t_len: usize) -> Result<Self> {
        if h.is_empty() || t_len == 0 {
            return Err(Error::Input("filter and signal must be non-empty".into()));
        }
        let pad = h.len().div_ceil(2);
        let g_len = 2 * h.len() - 1;
        let padded = t_len + 2 * pad;
        let size = (padded + g_len - 1).next_power_of_two();
        let (forward, inverse) = fft_pair(size);
        let mut g = vec![0.0; g_len];
        for (i, &a) in h.iter().enumerate() {
            for (j, &b) in h.iter().enumerate() {
                g[i + j] += a * b;
            }
        }
        let mut spectrum: Vec<Complex<f64>> = g.iter().map(|&v| Complex::new(v, 0.0)).collect();
        spectrum.resize(size, Complex::new(0.0, 0.0));
        forward.process(&mut spectrum);
        let scale = 1.0 / size as f64;
        spectrum.iter_mut().for_each(|c| *c *= scale);
        Ok(ZeroPhaseFilter {
            t_len,
            pad,
            center: h.len() - 1,
            size,
            spectrum,
            forward,
            inverse,
        })
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    /// Filters every row of `data` (rows of `t_len` samples) in place.
    pub fn apply_rows<T: Element>(&self, data: &mut [T]) -> Result<()> {
        if data.len() % self.t_len != 0 {
            return Err(Error::Shape(format!(
                "{} samples are not whole rows of {}",
                data.len(),
                self.t_len
            )));
        }
        let mut buf = vec![Complex::new(0.0, 0.0); self.size];
        let mut rows = data.chunks_exact_mut(self.t_len);
        loop {
            let Some(first) = rows.next() else { break };
            let second = rows.next();
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            let padded = self.t_len + 2 * self.pad;
            for (p, slot) in buf.iter_mut().take(padded).enumerate() {
                let src = reflect(p as isize - self.pad as isize, self.t_len);
                let re = first[src].to_f64().expect("finite");
                let im = second.as_ref().map_or(0.0, |s| s[src].to_f64().expect("finite"));
                *slot = Complex::new(re, im);
            }
            self.forward.process(&mut buf);
            buf.iter_mut().zip(&self.spectrum).for_each(|(b, s)| *b *= s);
            self.inverse.process(&mut buf);
            let offset = self.pad + self.center;
            for t in 0..self.t_len {
                first[t] = T::from_f64_lossy(buf[offset + t].re);
            }
            if let Some(second) = second {
                for t in 0..self.t_len {
                    second[t] = T::from_f64_lossy(buf[offset + t].im);
                }
            }
        }
        Ok(())
    }
}

/// Zero-phase filtered copy of `signal [..., T]` (no gradient is recorded).
pub fn apply_filter<T: Element>(signal: &Tensor<T>, h: &[f64]) -> Result<Tensor<T>> {
    let t_len = *signal
        .shape()
        .last()
        .ok_or_else(|| Error::Shape("cannot filter a scalar".into()))?;
    let mut data = signal.to_vec();
    ZeroPhaseFilter::new(h, t_len)?.apply_rows(&mut data)?;
    Tensor::from_vec(signal.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflection_indices() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect(-5, 1), 0);
    }

    #[test]
    fn invalid_specs() {
        for (lo, hi) in [(0.0, 5.0), (10.0, 10.0), (498.0, 500.0), (20.0, 10.0)] {
            assert!(matches!(design_bandpass(&FilterSpec::new(lo, hi)), Err(Error::Design(_))));
        }
        let even = FilterSpec { n_taps: 500, ..FilterSpec::new(10.0, 15.0) };
        assert!(even.validate().is_err());
    }

    #[test]
    fn schedule_ends() {
        let bank = build_filter_bank();
        assert_eq!(bank.len(), 100);
        assert_eq!((bank[99].f_lo, bank[99].f_hi), (298.0, 303.0));
    }

    #[test]
    fn csv_header_and_rows() {
        let spec = FilterSpec { n_taps: 5, ..FilterSpec::new(100.0, 200.0) };
        let h = design_bandpass(&spec).unwrap();
        let csv = coefficients_csv(&spec, &h);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# f_lo=100,f_hi=200,sample_rate=1000,n_taps=5,design=least-squares");
        assert_eq!(lines.len(), 2 + 5);
        let back: Vec<f64> = lines[2..].iter().map(|l| l.parse().unwrap()).collect();
        assert_eq!(back, h);
    }
}
