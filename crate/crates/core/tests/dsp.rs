use std::f64::consts::PI;

use ecognet::dsp::{apply_filter, build_filter_bank, design_bandpass, FilterSpec, ZeroPhaseFilter};
use ecognet::Tensor;
use proptest::prelude::*;

/// Direct evaluation of `|sum_k h[k] exp(-j 2 pi f k / fs)|`.
fn response(h: &[f64], f: f64) -> f64 {
    let mut re = 0.0;
    let mut im = 0.0;
    for (k, c) in h.iter().enumerate() {
        let arg = -2.0 * PI * f * k as f64 / 1000.0;
        re += c * arg.cos();
        im += c * arg.sin();
    }
    (re * re + im * im).sqrt()
}

fn sine(f: f64, n: usize, phase: f64) -> Vec<f64> {
    (0..n)
        .map(|t| (2.0 * PI * f * t as f64 / 1000.0 + phase).sin())
        .collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

#[test]
fn band_10_15_response() {
    let h = design_bandpass(&FilterSpec::new(10.0, 15.0)).unwrap();
    assert_eq!(h.len(), 501);
    let mid = response(&h, 12.5);
    assert!((0.9..=1.1).contains(&mid), "{mid}");
    assert!(response(&h, 0.0) <= 0.05);
    assert!(response(&h, 100.0) <= 0.05);
    let dc: f64 = h.iter().sum();
    assert!(dc.abs() <= 0.05, "{dc}");
    for i in 0..h.len() {
        assert!((h[i] - h[h.len() - 1 - i]).abs() <= 1e-15);
    }
}

#[test]
fn every_bank_filter_meets_the_ripple_specs() {
    let bank = build_filter_bank();
    for spec in &bank {
        let h = design_bandpass(spec).unwrap();
        let mut f = spec.f_lo + 1.0;
        while f <= spec.f_hi - 1.0 + 1e-9 {
            assert!(response(&h, f) >= 0.9, "{spec:?} pass {f}");
            f += 0.25;
        }
        let mut f = 0.0;
        while f <= 500.0 {
            if f < spec.f_lo - 5.0 || f > spec.f_hi + 5.0 {
                assert!(response(&h, f) <= 0.05, "{spec:?} stop {f}");
            }
            f += 0.5;
        }
    }
}

#[test]
fn bank_matches_loop_simulation() {
    let mut expected = Vec::new();
    let mut on = 1.0;
    while on < 300.0 {
        expected.push((on, on + 5.0));
        on += 3.0;
    }
    let bank: Vec<(f64, f64)> = build_filter_bank().iter().map(|s| (s.f_lo, s.f_hi)).collect();
    assert_eq!(bank, expected);
    assert_eq!(bank.len(), 100);
    assert_eq!(bank[0], (1.0, 6.0));
    for w in bank.windows(2) {
        assert_eq!(w[0].1 - w[1].0, 2.0);
    }
    let mut f = 1.0;
    while f <= 300.0 {
        assert!(bank.iter().any(|&(lo, hi)| lo <= f && f <= hi), "{f} uncovered");
        f += 0.1;
    }
}

#[test]
fn sinusoid_oracles() {
    let h = design_bandpass(&FilterSpec::new(10.0, 15.0)).unwrap();
    let n = 3000;
    let x = Tensor::from_vec(&[1, n], sine(12.5, n, 0.3)).unwrap();
    let y = apply_filter(&x, &h).unwrap();
    let interior = &y.data()[500..n - 500];
    let ratio = rms(interior) / rms(&x.data()[500..n - 500]);
    assert!((0.8..=1.2).contains(&ratio), "{ratio}");

    let x = Tensor::from_vec(&[1, n], sine(100.0, n, 1.1)).unwrap();
    let y = apply_filter(&x, &h).unwrap();
    assert!(rms(y.data()) < 0.01 * rms(x.data()));

    let zero = Tensor::<f64>::zeros(&[2, 3, 300]).unwrap();
    assert!(apply_filter(&zero, &h).unwrap().data().iter().all(|v| *v == 0.0));
}

#[test]
fn zero_phase_peak_at_lag_zero() {
    let h = design_bandpass(&FilterSpec::new(40.0, 45.0)).unwrap();
    let n = 2000;
    let x = sine(42.5, n, 0.7);
    let y = apply_filter(&Tensor::from_vec(&[n], x.clone()).unwrap(), &h).unwrap();
    let y = y.data();
    let xc = |lag: isize| -> f64 {
        (600..n - 600)
            .map(|t| x[t] * y[(t as isize + lag) as usize])
            .sum()
    };
    let best = (-20..=20).max_by(|&a, &b| xc(a).total_cmp(&xc(b))).unwrap();
    assert_eq!(best, 0);
}

#[test]
fn short_signals_keep_length() {
    let h = design_bandpass(&FilterSpec::new(10.0, 15.0)).unwrap();
    for t in [1usize, 2, 7, 300] {
        let x = Tensor::<f32>::from_vec(&[3, t], (0..3 * t).map(|i| i as f32).collect()).unwrap();
        let y = apply_filter(&x, &h).unwrap();
        assert_eq!(y.shape(), &[3, t]);
        assert!(y.data().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn paired_rows_match_single_rows() {
    let h = design_bandpass(&FilterSpec::new(70.0, 75.0)).unwrap();
    let filter = ZeroPhaseFilter::new(&h, 300).unwrap();
    let rows: Vec<f64> = (0..900).map(|i| ((i * 37 % 101) as f64).sin()).collect();
    let mut together = rows.clone();
    filter.apply_rows(&mut together).unwrap();
    for r in 0..3 {
        let mut alone = rows[r * 300..(r + 1) * 300].to_vec();
        filter.apply_rows(&mut alone).unwrap();
        for (a, b) in alone.iter().zip(&together[r * 300..(r + 1) * 300]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn filtering_is_linear(
        x in proptest::collection::vec(-5.0f64..5.0, 300),
        y in proptest::collection::vec(-5.0f64..5.0, 300),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        band in 0usize..100,
    ) {
        let spec = build_filter_bank()[band];
        let h = design_bandpass(&spec).unwrap();
        let f = ZeroPhaseFilter::new(&h, 300).unwrap();
        let mut combo: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let (mut fx, mut fy) = (x.clone(), y.clone());
        f.apply_rows(&mut combo).unwrap();
        f.apply_rows(&mut fx).unwrap();
        f.apply_rows(&mut fy).unwrap();
        let scale = combo.iter().fold(1e-3f64, |m, v| m.max(v.abs()));
        for i in 0..300 {
            let lin = a * fx[i] + b * fy[i];
            prop_assert!((combo[i] - lin).abs() <= 1e-5 * scale);
        }
    }
}
