use ecognet::analysis::{
    channel_importance, cross_subject_eval, export_heatmap, frequency_importance, heatmap_pgm,
    parse_heatmap_csv, HeatmapFormat, ImportanceReport, ReportKind,
};
use ecognet::data::{generate_synthetic, Dataset, SyntheticConfig};
use ecognet::dsp::build_filter_bank;
use ecognet::{Error, Model, ModelConfig};

fn small_model(seed: u64) -> Model<f32> {
    Model::new(ModelConfig::with_banks(&[(8, 2)]), seed).unwrap()
}

fn small_data(seed: u64, per_class: usize) -> Dataset {
    generate_synthetic(&SyntheticConfig {
        trials_per_class: per_class,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

fn weight_bits(m: &Model<f32>) -> Vec<u32> {
    m.params()
        .iter()
        .flat_map(|p| p.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect()
}

#[test]
fn frequency_report_has_one_entry_per_band() {
    let model = small_model(0);
    let data = small_data(1, 1);
    let bank = build_filter_bank();
    let report = frequency_importance(&model, &data, &bank).unwrap();
    assert_eq!(report.kind, ReportKind::Frequency);
    assert_eq!(report.bands.len(), 100);
    for (b, s) in report.bands.iter().zip(&bank) {
        assert_eq!((b.f_lo, b.f_hi), (s.f_lo, s.f_hi));
        assert!((0.0..=1.0).contains(&b.accuracy));
    }
    assert_eq!(report.parameters["renormalized_after_filtering"], true);
    assert_eq!(report.model_sha256.len(), 64);
}

#[test]
fn empty_dataset_is_refused() {
    let model = small_model(0);
    let empty = Dataset::empty(128, 300);
    assert!(frequency_importance(&model, &empty, &build_filter_bank()[..1]).is_err());
    assert!(channel_importance(&model, &empty).is_err());
}

#[test]
fn channel_report_is_pure_and_deterministic() {
    let model = small_model(2);
    let data = small_data(3, 2);
    let (before_model, before_data) = (weight_bits(&model), data.clone());
    let a = channel_importance(&model, &data).unwrap();
    let b = channel_importance(&model, &data).unwrap();
    assert_eq!(a.grid, b.grid);
    assert_eq!(a.baseline_accuracy, b.baseline_accuracy);
    assert_eq!(weight_bits(&model), before_model);
    assert_eq!(data, before_data);
    assert_eq!(a.grid.len(), 8);
    assert!(a.grid.iter().all(|r| r.len() == 16));
    for r in 0..8 {
        for c in 0..16 {
            assert_eq!(a.grid[r][c], a.channel_drop(16 * r + c));
        }
    }
}

#[test]
fn ignored_channels_have_exactly_zero_drop() {
    let mut model = small_model(4);
    // Spatial kernels are 8x8 patches shared by both halves of the grid, so
    // zeroing patch cell (3, 5) removes channels 16*3+5 and 16*3+13.
    let names: Vec<String> = model.param_names().iter().map(|s| s.to_string()).collect();
    let values = model
        .params()
        .iter()
        .zip(&names)
        .map(|(p, name)| {
            let mut v = p.to_vec();
            if name == "encoder.spatial.weight" {
                for k in 0..p.shape()[0] {
                    v[k * 64 + 3 * 8 + 5] = 0.0;
                }
            }
            v
        })
        .collect();
    model.set_param_values(values).unwrap();
    let report = channel_importance(&model, &small_data(5, 3)).unwrap();
    assert_eq!(report.channel_drop(53), 0.0);
    assert_eq!(report.channel_drop(61), 0.0);
}

#[test]
fn cross_subject_matrix_shape_and_errors() {
    let models = vec![small_model(0), small_model(1)];
    let sets = vec![small_data(6, 1), small_data(7, 1)];
    let names = vec!["a".to_string(), "b".to_string()];
    let m = cross_subject_eval(&names, &models, &sets).unwrap();
    assert_eq!(m.accuracy.len(), 2);
    assert!(m.accuracy.iter().all(|r| r.len() == 2));

    let mut narrow = small_data(8, 1);
    narrow.channels = 64;
    for t in &mut narrow.trials {
        t.background.truncate(64 * 300);
        t.active.truncate(64 * 300);
    }
    assert!(matches!(
        cross_subject_eval(&names, &models, &[sets[0].clone(), narrow]),
        Err(Error::Shape(_))
    ));
    assert!(cross_subject_eval(&names[..1], &models[..1], &sets[..1]).is_err());
}

fn channel_report(grid: Vec<Vec<f64>>) -> ImportanceReport {
    ImportanceReport {
        kind: ReportKind::Channel,
        bands: Vec::new(),
        grid,
        baseline_accuracy: 0.5,
        parameters: serde_json::json!({}),
        model_sha256: "0".repeat(64),
        dataset_sha256: "1".repeat(64),
        timestamp: "2026-01-01T00:00:00Z".into(),
    }
}

#[test]
fn heatmap_files_round_trip() {
    let grid: Vec<Vec<f64>> = (0..8)
        .map(|r| (0..16).map(|c| (16 * r + c) as f64 / 7.0 - 3.0).collect())
        .collect();
    let report = channel_report(grid.clone());
    let dir = tempfile::tempdir().unwrap();
    let written = export_heatmap(&report, &dir.path().join("heat"), HeatmapFormat::Both).unwrap();
    assert_eq!(written.len(), 2);
    let csv = std::fs::read_to_string(dir.path().join("heat.csv")).unwrap();
    assert_eq!(parse_heatmap_csv(&csv).unwrap(), grid);

    let pgm = std::fs::read_to_string(dir.path().join("heat.pgm")).unwrap();
    let mut tokens = pgm.split_whitespace();
    assert_eq!(tokens.next(), Some("P2"));
    assert_eq!(tokens.next(), Some("16"));
    assert_eq!(tokens.next(), Some("8"));
    assert_eq!(tokens.next(), Some("255"));
    let px: Vec<u8> = tokens.map(|t| t.parse().unwrap()).collect();
    // Channel 0 holds the smallest drop (white), channel 127 the largest (black).
    assert_eq!(px[0], 255);
    assert_eq!(px[127], 0);

    let flat = heatmap_pgm(&vec![vec![0.01; 16]; 8]);
    let body: Vec<&str> = flat.split_whitespace().skip(4).collect();
    assert!(body.iter().all(|&p| p == body[0]));

    let path = dir.path().join("report.json");
    report.save(&path).unwrap();
    assert_eq!(ImportanceReport::load(&path).unwrap(), report);
}

#[test]
fn frequency_reports_cannot_be_drawn() {
    let mut report = channel_report(Vec::new());
    report.kind = ReportKind::Frequency;
    let dir = tempfile::tempdir().unwrap();
    assert!(export_heatmap(&report, &dir.path().join("x"), HeatmapFormat::Csv).is_err());
}
