use ecognet::data::{
    background_stats, decode_dataset, encode_dataset, generate_synthetic, iterate_cv, labels_csv,
    load_dataset, normalize_trial, save_dataset, split_folds, Carrier, ClassSignature, Dataset,
    SyntheticConfig, Trial, DATASET_MAGIC,
};
use ecognet::dsp::{design_bandpass, FilterSpec, ZeroPhaseFilter};
use ecognet::Error;
use proptest::prelude::*;

fn small_config(seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        trials_per_class: 6,
        seed,
        ..SyntheticConfig::default()
    }
}

#[test]
fn hand_computed_statistics() {
    // Background {0, 2, 4, 6}: mean 3, population variance (9+1+1+9)/4 = 5.
    let t = Trial {
        background: vec![0.0, 2.0, 4.0, 6.0],
        active: vec![3.0, 8.0, -2.0, 3.0 + 5f32.sqrt()],
        label: 0,
        subject: "s".into(),
    };
    let (m, s) = background_stats(&t.background);
    assert_eq!(m, 3.0);
    assert!((s - 5f64.sqrt()).abs() < 1e-15);
    let out = normalize_trial(&t, 2).unwrap();
    let expect: Vec<f32> = t
        .active
        .iter()
        .map(|&v| ((v as f64 - 3.0) / 5f64.sqrt()) as f32)
        .collect();
    assert_eq!(out.data(), &expect[..]);
    assert!((out.data()[3] - 1.0).abs() < 1e-6);
}

#[test]
fn identity_statistics_pass_through() {
    let t = Trial {
        background: vec![1.0, -1.0, -1.0, 1.0],
        active: vec![0.25, -7.5, 3.0, 0.0],
        label: 0,
        subject: "s".into(),
    };
    assert_eq!(normalize_trial(&t, 1).unwrap().data(), &t.active[..]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalisation_is_affine_invariant(
        bg in proptest::collection::vec(-4i32..4, 12),
        act in proptest::collection::vec(-8i32..8, 12),
        shift in -64i32..64,
        scale_pow in 0u32..4,
    ) {
        prop_assume!(bg.iter().any(|&v| v != bg[0]));
        // Integer data and power-of-two scales keep every transform exact.
        let s = (1u32 << scale_pow) as f32;
        let base = Trial {
            background: bg.iter().map(|&v| v as f32).collect(),
            active: act.iter().map(|&v| v as f32).collect(),
            label: 0,
            subject: "s".into(),
        };
        let moved = Trial {
            background: base.background.iter().map(|v| v * s + shift as f32).collect(),
            active: base.active.iter().map(|v| v * s + shift as f32).collect(),
            ..base.clone()
        };
        let a = normalize_trial(&base, 3).unwrap();
        let b = normalize_trial(&moved, 3).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() <= 1e-6 * (1.0 + x.abs()), "{} vs {}", x, y);
        }
    }

    #[test]
    fn folds_partition_and_stratify(
        counts in proptest::collection::vec(5usize..14, 1..7),
        k in 2usize..6,
        seed in any::<u64>(),
    ) {
        let labels: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect();
        let split = split_folds(&labels, k, seed).unwrap();
        let mut seen = vec![0usize; labels.len()];
        for fold in &split.folds {
            for &i in fold {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        for class in 0..counts.len() {
            let per: Vec<usize> = split
                .folds
                .iter()
                .map(|f| f.iter().filter(|&&i| labels[i] == class).count())
                .collect();
            prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
        }
        let sizes: Vec<usize> = split.folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for (train, test) in iterate_cv(&split) {
            prop_assert_eq!(train.len() + test.len(), labels.len());
            prop_assert!(train.iter().all(|i| !test.contains(i)));
        }
        prop_assert_eq!(split_folds(&labels, k, seed).unwrap(), split);
    }
}

#[test]
fn thirty_trials_five_folds() {
    let labels: Vec<usize> = (0..30).map(|i| i % 6).collect();
    let split = split_folds(&labels, 5, 3).unwrap();
    for fold in &split.folds {
        let mut classes: Vec<usize> = fold.iter().map(|&i| labels[i]).collect();
        classes.sort_unstable();
        assert_eq!(classes, vec![0, 1, 2, 3, 4, 5]);
    }
}

#[test]
fn too_few_trials_is_a_split_error() {
    let labels = vec![0, 0, 0, 1, 1, 1, 1, 1];
    assert!(matches!(split_folds(&labels, 5, 0), Err(Error::Split(_))));
    assert!(matches!(split_folds(&[], 5, 0), Err(Error::Split(_))));
}

#[test]
fn synthetic_is_deterministic() {
    let a = generate_synthetic(&small_config(11)).unwrap();
    let b = generate_synthetic(&small_config(11)).unwrap();
    let c = generate_synthetic(&small_config(12)).unwrap();
    assert_eq!(encode_dataset(&a).unwrap(), encode_dataset(&b).unwrap());
    assert_ne!(encode_dataset(&a).unwrap(), encode_dataset(&c).unwrap());
    assert_eq!(a.len(), 36);
    assert_eq!(a.trials[0].active.len(), 128 * 300);
}

#[test]
fn carrier_appears_only_in_the_active_interval_of_signature_electrodes() {
    let mut quiet = small_config(4);
    quiet.classes.iter_mut().for_each(|c| c.carriers[0].amplitude = 0.0);
    let loud = generate_synthetic(&small_config(4)).unwrap();
    let quiet = generate_synthetic(&quiet).unwrap();
    let cfg = small_config(4);
    for (a, b) in loud.trials.iter().zip(&quiet.trials) {
        assert_eq!(a.background, b.background);
        let sig = &cfg.classes[a.label].electrodes;
        for ch in 0..128 {
            let (ra, rb) = (&a.active[ch * 300..(ch + 1) * 300], &b.active[ch * 300..(ch + 1) * 300]);
            assert_eq!(ra != rb, sig.contains(&ch), "channel {ch}");
        }
    }
}

#[test]
fn planted_band_energy_matches_amplitude() {
    let amplitude = 1.5;
    let cfg = SyntheticConfig {
        classes: vec![ClassSignature {
            electrodes: vec![5, 40, 77],
            carriers: vec![Carrier {
                band: (10.0, 20.0),
                amplitude,
            }],
        }],
        trials_per_class: 60,
        seed: 8,
        ..SyntheticConfig::default()
    };
    let ds = generate_synthetic(&cfg).unwrap();
    let h = design_bandpass(&FilterSpec::new(8.0, 22.0)).unwrap();
    let filter = ZeroPhaseFilter::new(&h, 300).unwrap();
    let (mut sig, mut other) = (0.0, 0.0);
    for t in &ds.trials {
        let mut x: Vec<f64> = t.active.iter().map(|&v| v as f64).collect();
        filter.apply_rows(&mut x).unwrap();
        for ch in 0..128 {
            let e: f64 = x[ch * 300..(ch + 1) * 300].iter().map(|v| v * v).sum::<f64>() / 300.0;
            if cfg.classes[0].electrodes.contains(&ch) {
                sig += e / 3.0;
            } else {
                other += e / 125.0;
            }
        }
    }
    let n = ds.len() as f64;
    let excess = (sig - other) / n;
    // Mean square of the 0.2 Tukey window is 1 - 0.2 * 5/8 = 0.875.
    let expected = amplitude * amplitude * 0.875;
    assert!((excess / expected - 1.0).abs() < 0.2, "{excess} vs {expected}");
}

#[test]
fn dataset_round_trip_and_corruption() {
    let ds = generate_synthetic(&small_config(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.ecog");
    save_dataset(&ds, &path).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back.trials, ds.trials);
    assert_eq!((back.channels, back.samples), (128, 300));
    for (a, b) in back.trials.iter().zip(&ds.trials) {
        for (x, y) in a.active.iter().zip(&b.active) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], DATASET_MAGIC);
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_dataset(&bad), Err(Error::Format(_))));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(decode_dataset(&bad), Err(Error::Format(_))));
    assert!(matches!(decode_dataset(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
    assert!(matches!(decode_dataset(&bytes[..10]), Err(Error::Format(_))));
}

#[test]
fn empty_dataset_round_trips() {
    let ds = Dataset::empty(128, 300);
    let bytes = encode_dataset(&ds).unwrap();
    assert_eq!(bytes.len(), 4 + 4 + 4 + 6);
    let back = decode_dataset(&bytes).unwrap();
    assert!(back.is_empty());
    assert_eq!((back.channels, back.samples), (128, 300));
}

#[test]
fn labels_csv_rows() {
    let ds = generate_synthetic(&SyntheticConfig {
        trials_per_class: 1,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let csv = labels_csv(&ds);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "trial_index,label,subject");
    assert_eq!(lines[3], "2,2,synthetic");
    assert_eq!(lines.len(), 7);
}
