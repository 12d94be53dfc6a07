//! `ecognet`: one entry point for every workflow of the decoding pipeline.
//!
//! Exit codes: 0 on success, 1 for usage errors (bad flags, missing inputs),
//! 2 for failures while running.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use ecognet::analysis::{
    channel_importance, cross_subject_eval, export_heatmap, frequency_importance, HeatmapFormat,
    ImportanceReport, ReportKind,
};
use ecognet::data::{
    generate_synthetic, load_dataset, save_dataset, write_ground_truth, write_labels_csv, Carrier,
    SyntheticConfig, CLASS_NAMES,
};
use ecognet::dsp::build_filter_bank;
use ecognet::harness::{
    benchmark_epoch, evaluate, metrics_ndjson, prepare, run_cv_prepared, train, TrainConfig,
};
use ecognet::model::{format_kernel_banks, parse_kernel_banks, Encoder, KernelBank};
use ecognet::{Model, ModelConfig};

#[derive(Parser, Debug)]
#[command(name = "ecognet", version, about = "Bi-band ECoG decoder: data, training and analyses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with planted class signatures.
    GenData(GenDataArgs),
    /// Train with k-fold cross-validation (or on everything with --folds 1).
    Train(TrainArgs),
    /// Accuracy of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Band-pass sweep of 100 filters and the accuracy in each band.
    FreqTest(ImportanceArgs),
    /// Accuracy drop when each channel is zeroed.
    ChanTest(ImportanceArgs),
    /// Every model evaluated on every source's held-out data.
    CrossSubject(CrossSubjectArgs),
    /// Cross-validated ablation grid over TCN counts, kernel sets and encoders.
    Sweep(SweepArgs),
    /// Render a channel report as a CSV and/or PGM heat map.
    ExportHeatmap(HeatmapArgs),
    /// Median epoch time for a model configuration.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Clone)]
struct ModelFlags {
    /// Temporal kernel banks as LEN:COUNT pairs.
    #[arg(long, default_value = "32:32,512:32")]
    banks: String,
    /// Spatial encoder variant.
    #[arg(long, value_enum, default_value = "spatial3d")]
    encoder: EncoderFlag,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum EncoderFlag {
    Spatial3d,
    Spatial2d,
}

impl From<EncoderFlag> for Encoder {
    fn from(e: EncoderFlag) -> Self {
        match e {
            EncoderFlag::Spatial3d => Encoder::Spatial3d,
            EncoderFlag::Spatial2d => Encoder::Spatial2d,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Preset {
    /// 400 epochs, batch 128, lr 1.5e-6, weight decay 1e-4.
    Paper,
    /// 60 epochs at lr 1e-3 for small synthetic sets.
    Desk,
}

#[derive(Args, Debug, Clone)]
struct OptimFlags {
    /// Named optimiser defaults; the flags below override single fields.
    #[arg(long, value_enum, default_value = "paper")]
    preset: Preset,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Evaluate the held-out fold every N epochs (and always after the last).
    #[arg(long)]
    eval_every: Option<usize>,
    /// Seed for model initialisation, fold assignment and batch order.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Number of classes, each taking the next default electrode patch.
    #[arg(long, default_value_t = 6)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    trials_per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Carrier RMS amplitude in units of the pink-noise standard deviation.
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    #[arg(long, default_value_t = 10.0)]
    band_lo: f64,
    #[arg(long, default_value_t = 20.0)]
    band_hi: f64,
    #[arg(long, default_value_t = 1.0)]
    pink_std: f64,
    #[arg(long, default_value_t = 0.1)]
    white_std: f64,
    #[arg(long, default_value = "synthetic")]
    subject: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset file written by gen-data.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    optim: OptimFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint (`.bben`).
    #[arg(long)]
    model: PathBuf,
    /// Model configuration; defaults to the checkpoint path with a `.cfg` extension.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ImportanceArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CrossSubjectArgs {
    /// One checkpoint per source; repeat the flag.
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    /// Held-out dataset per source, in the same order as --model.
    #[arg(long = "data", required = true)]
    data: Vec<PathBuf>,
    /// Source names; defaults to the subject recorded in each dataset.
    #[arg(long, value_delimiter = ',')]
    names: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    /// Total TCN counts to try.
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
    tcn_counts: Vec<usize>,
    /// Kernel-length sets separated by ';', lengths within a set by '+'.
    /// The TCN count is split evenly across the lengths of a set.
    #[arg(long, default_value = "32+512")]
    kernel_sets: String,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "spatial3d")]
    encoders: Vec<EncoderFlag>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[command(flatten)]
    optim: OptimFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum FormatFlag {
    Csv,
    Pgm,
    Both,
}

#[derive(Args, Debug)]
struct HeatmapArgs {
    /// Channel report written by chan-test.
    #[arg(long)]
    report: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    format: FormatFlag,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Dataset to time on; a synthetic set of --trials trials otherwise.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    trials: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    /// Measured epochs after the warm-up epoch (at least 3).
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<ecognet::Error> for Failure {
    fn from(e: ecognet::Error) -> Self {
        match e {
            ecognet::Error::Usage(m) => Failure::Usage(m),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn runtime(msg: impl std::fmt::Display) -> Failure {
    Failure::Runtime(msg.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Outcome<()> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::FreqTest(a) => importance_cmd(a, ReportKind::Frequency),
        Command::ChanTest(a) => importance_cmd(a, ReportKind::Channel),
        Command::CrossSubject(a) => cross_subject_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::ExportHeatmap(a) => heatmap_cmd(a),
        Command::Bench(a) => bench_cmd(a),
    }
}

// ------------------------------------------------------------------ helpers

fn require_file(path: &Path, what: &str) -> Outcome<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist or is not a file", path.display())))
    }
}

fn sha256_file(path: &Path) -> Outcome<String> {
    let bytes = fs::read(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn create_out(dir: &Path) -> Outcome<()> {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Outcome<()> {
    fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn config_path(model: &Path, config: &Option<PathBuf>) -> PathBuf {
    config.clone().unwrap_or_else(|| model.with_extension("cfg"))
}

fn train_config(f: &OptimFlags) -> Outcome<TrainConfig> {
    let base = match f.preset {
        Preset::Paper => TrainConfig::paper(),
        Preset::Desk => TrainConfig::desk(),
    };
    let cfg = TrainConfig {
        epochs: f.epochs.unwrap_or(base.epochs),
        batch_size: f.batch_size.unwrap_or(base.batch_size),
        lr: f.lr.unwrap_or(base.lr),
        weight_decay: f.weight_decay.unwrap_or(base.weight_decay),
        eval_every: f.eval_every.unwrap_or(base.eval_every),
        seed: f.seed,
        ..base
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn model_config(f: &ModelFlags) -> Outcome<ModelConfig> {
    let cfg = ModelConfig {
        kernel_banks: parse_kernel_banks(&f.banks).map_err(|e| usage(e.to_string()))?,
        encoder: f.encoder.into(),
        ..ModelConfig::default()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn load_model(model: &Path, config: &Option<PathBuf>) -> Outcome<(Model<f32>, ModelConfig)> {
    let cfg = ModelConfig::load(&config_path(model, config))?;
    Ok((Model::load(cfg.clone(), model)?, cfg))
}

/// Records what ran, with which settings and on which inputs, so the run can
/// be repeated from this file alone.
fn write_manifest(out: &Path, command: &str, config: Value, inputs: &[&Path], outputs: Vec<String>) -> Outcome<()> {
    let inputs = inputs
        .iter()
        .map(|p| Ok(json!({ "path": p.display().to_string(), "sha256": sha256_file(p)? })))
        .collect::<Outcome<Vec<Value>>>()?;
    let manifest = json!({
        "command": command,
        "argv": std::env::args().collect::<Vec<_>>(),
        "version": env!("CARGO_PKG_VERSION"),
        "timestamp": chrono::Utc::now().to_rfc3339(),
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(runtime)?;
    write_text(&out.join(format!("{command}.manifest.json")), &text)
}

// ------------------------------------------------------------------ commands

fn gen_data(a: GenDataArgs) -> Outcome<()> {
    if a.classes == 0 || a.classes > CLASS_NAMES.len() {
        return Err(usage(format!("--classes must be between 1 and {}", CLASS_NAMES.len())));
    }
    let mut cfg = SyntheticConfig {
        trials_per_class: a.trials_per_class,
        seed: a.seed,
        pink_std: a.pink_std,
        white_std: a.white_std,
        subject: a.subject.clone(),
        ..SyntheticConfig::default()
    };
    cfg.classes.truncate(a.classes);
    for class in &mut cfg.classes {
        class.carriers = vec![Carrier {
            band: (a.band_lo, a.band_hi),
            amplitude: a.amplitude,
        }];
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if a.trials_per_class == 0 {
        return Err(usage("--trials-per-class must be positive"));
    }

    let dataset = generate_synthetic(&cfg)?;
    create_out(&a.out)?;
    save_dataset(&dataset, &a.out.join("set.ecog"))?;
    write_ground_truth(&dataset, &a.out.join("ground_truth.json"))?;
    write_labels_csv(&dataset, &a.out.join("labels.csv"))?;
    write_manifest(
        &a.out,
        "gen-data",
        serde_json::to_value(&cfg).map_err(runtime)?,
        &[],
        vec!["set.ecog".into(), "ground_truth.json".into(), "labels.csv".into()],
    )?;
    println!("wrote {} trials to {}", dataset.len(), a.out.join("set.ecog").display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Outcome<()> {
    let tc = train_config(&a.optim)?;
    let mc = model_config(&a.model)?;
    if a.folds == 0 {
        return Err(usage("--folds must be at least 1"));
    }
    require_file(&a.data, "dataset")?;

    let dataset = load_dataset(&a.data)?;
    let prepared = prepare(&dataset)?;
    create_out(&a.out)?;
    let mut outputs = Vec::new();
    let summary = if a.folds == 1 {
        let mut model = Model::<f32>::new(mc.clone(), tc.seed)?;
        let run = train(&mut model, &prepared, None, &tc, |e| {
            eprintln!("epoch {} loss {:.4} acc {:.3}", e.epoch, e.train_loss, e.train_accuracy)
        })?;
        model.save(&a.out.join("fold0.bben"))?;
        mc.save(&a.out.join("fold0.cfg"))?;
        write_text(&a.out.join("metrics.ndjson"), &metrics_ndjson(None, &run))?;
        outputs.extend(["fold0.bben", "fold0.cfg", "metrics.ndjson"].map(String::from));
        json!({ "final_train_accuracy": run.epochs.last().map(|e| e.train_accuracy) })
    } else {
        let cv = run_cv_prepared(&prepared, &mc, &tc, a.folds, Some(&a.out))?;
        for f in 0..a.folds {
            outputs.push(format!("fold{f}.bben"));
            outputs.push(format!("fold{f}.cfg"));
        }
        outputs.extend(["metrics.ndjson", "cv.json"].map(String::from));
        println!(
            "{}-fold accuracy {:.4} +/- {:.4}",
            a.folds, cv.metrics.mean_accuracy, cv.metrics.std_accuracy
        );
        json!({ "mean_accuracy": cv.metrics.mean_accuracy, "std_accuracy": cv.metrics.std_accuracy })
    };
    write_manifest(
        &a.out,
        "train",
        json!({ "folds": a.folds, "train": tc, "model": mc, "result": summary }),
        &[&a.data],
        outputs,
    )
}

fn eval_cmd(a: EvalArgs) -> Outcome<()> {
    require_file(&a.model, "checkpoint")?;
    require_file(&config_path(&a.model, &a.config), "model config")?;
    require_file(&a.data, "dataset")?;
    let (model, cfg) = load_model(&a.model, &a.config)?;
    let accuracy = evaluate(&model, &prepare(&load_dataset(&a.data)?)?, 128)?;
    create_out(&a.out)?;
    write_text(
        &a.out.join("eval.json"),
        &serde_json::to_string_pretty(&json!({ "accuracy": accuracy })).map_err(runtime)?,
    )?;
    println!("accuracy {accuracy:.4}");
    write_manifest(
        &a.out,
        "eval",
        json!({ "model": cfg }),
        &[&a.model, &config_path(&a.model, &a.config), &a.data],
        vec!["eval.json".into()],
    )
}

fn importance_cmd(a: ImportanceArgs, kind: ReportKind) -> Outcome<()> {
    let cfg_path = config_path(&a.model, &a.config);
    require_file(&a.model, "checkpoint")?;
    require_file(&cfg_path, "model config")?;
    require_file(&a.data, "dataset")?;
    let (model, cfg) = load_model(&a.model, &a.config)?;
    let dataset = load_dataset(&a.data)?;
    let (report, name, command) = match kind {
        ReportKind::Frequency => (
            frequency_importance(&model, &dataset, &build_filter_bank())?,
            "freq_report.json",
            "freq-test",
        ),
        ReportKind::Channel => (channel_importance(&model, &dataset)?, "chan_report.json", "chan-test"),
    };
    create_out(&a.out)?;
    report.save(&a.out.join(name))?;
    println!("baseline accuracy {:.4}; report in {}", report.baseline_accuracy, a.out.join(name).display());
    write_manifest(&a.out, command, json!({ "model": cfg }), &[&a.model, &cfg_path, &a.data], vec![name.into()])
}

fn cross_subject_cmd(a: CrossSubjectArgs) -> Outcome<()> {
    if a.models.len() != a.data.len() || a.models.len() < 2 {
        return Err(usage("give at least two --model flags and exactly one --data per --model"));
    }
    if !a.names.is_empty() && a.names.len() != a.models.len() {
        return Err(usage("--names must list one name per --model"));
    }
    for (m, d) in a.models.iter().zip(&a.data) {
        require_file(m, "checkpoint")?;
        require_file(&m.with_extension("cfg"), "model config")?;
        require_file(d, "dataset")?;
    }
    let models = a
        .models
        .iter()
        .map(|m| load_model(m, &None).map(|(model, _)| model))
        .collect::<Outcome<Vec<_>>>()?;
    let sets = a.data.iter().map(|d| load_dataset(d)).collect::<ecognet::Result<Vec<_>>>()?;
    let names = if a.names.is_empty() {
        sets.iter()
            .enumerate()
            .map(|(i, s)| s.trials.first().map_or(format!("source{i}"), |t| t.subject.clone()))
            .collect()
    } else {
        a.names.clone()
    };
    let matrix = cross_subject_eval(&names, &models, &sets)?;
    create_out(&a.out)?;
    let mut csv = String::from("trained_on");
    for n in &names {
        write!(csv, ",{n}").unwrap();
    }
    csv.push('\n');
    for (n, row) in names.iter().zip(&matrix.accuracy) {
        csv.push_str(n);
        for v in row {
            write!(csv, ",{v}").unwrap();
        }
        csv.push('\n');
    }
    write_text(&a.out.join("cross_subject.csv"), &csv)?;
    write_text(
        &a.out.join("cross_subject.json"),
        &serde_json::to_string_pretty(&matrix).map_err(runtime)?,
    )?;
    print!("{csv}");
    let mut inputs: Vec<&Path> = Vec::new();
    for (m, d) in a.models.iter().zip(&a.data) {
        inputs.push(m);
        inputs.push(d);
    }
    write_manifest(
        &a.out,
        "cross-subject",
        json!({ "names": names }),
        &inputs,
        vec!["cross_subject.csv".into(), "cross_subject.json".into()],
    )
}

/// Banks splitting `n_tcn` evenly across `lengths`.
fn split_banks(n_tcn: usize, lengths: &[usize]) -> Result<Vec<KernelBank>, String> {
    if lengths.is_empty() || n_tcn % lengths.len() != 0 || n_tcn == 0 {
        return Err(format!("{n_tcn} TCNs do not split evenly across {} kernel lengths", lengths.len()));
    }
    Ok(lengths
        .iter()
        .map(|&len| KernelBank {
            len,
            count: n_tcn / lengths.len(),
        })
        .collect())
}

fn parse_kernel_sets(s: &str) -> Outcome<Vec<Vec<usize>>> {
    s.split(';')
        .map(|set| {
            set.split('+')
                .map(|l| {
                    l.trim()
                        .parse::<usize>()
                        .map_err(|_| usage(format!("kernel length {l:?} in --kernel-sets is not an integer")))
                })
                .collect()
        })
        .collect()
}

fn sweep_cmd(a: SweepArgs) -> Outcome<()> {
    let tc = train_config(&a.optim)?;
    let sets = parse_kernel_sets(&a.kernel_sets)?;
    if a.tcn_counts.is_empty() || sets.is_empty() || a.encoders.is_empty() {
        return Err(usage("the sweep grid is empty"));
    }
    if a.folds < 2 {
        return Err(usage("--folds must be at least 2"));
    }
    require_file(&a.data, "dataset")?;
    let prepared = prepare(&load_dataset(&a.data)?)?;
    create_out(&a.out)?;

    let mut csv = String::from("cell,n_tcn,kernel_banks,encoder,params,mean_accuracy,std_accuracy,status,error\n");
    let mut cell = 0;
    for &n_tcn in &a.tcn_counts {
        for lengths in &sets {
            for &encoder in &a.encoders {
                let encoder: Encoder = encoder.into();
                let label = lengths.iter().map(|l| l.to_string()).collect::<Vec<_>>().join("+");
                let result = split_banks(n_tcn, lengths).and_then(|banks| {
                    let mc = ModelConfig {
                        kernel_banks: banks,
                        encoder,
                        ..ModelConfig::default()
                    };
                    let dir = a.out.join(format!("cell{cell}"));
                    fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
                    let params = Model::<f32>::new(mc.clone(), tc.seed).map_err(|e| e.to_string())?.param_count();
                    let cv = run_cv_prepared(&prepared, &mc, &tc, a.folds, Some(&dir)).map_err(|e| e.to_string())?;
                    Ok((format_kernel_banks(&mc.kernel_banks), params, cv.metrics))
                });
                match result {
                    Ok((banks, params, m)) => {
                        writeln!(
                            csv,
                            "{cell},{n_tcn},{banks},{encoder},{params},{},{},ok,",
                            m.mean_accuracy, m.std_accuracy
                        )
                        .unwrap();
                        eprintln!("cell {cell}: {n_tcn} x {label} {encoder}: {:.4}", m.mean_accuracy);
                    }
                    Err(e) => {
                        writeln!(csv, "{cell},{n_tcn},{label},{encoder},,,,failed,\"{}\"", e.replace('"', "'")).unwrap();
                        eprintln!("cell {cell} failed: {e}");
                    }
                }
                cell += 1;
            }
        }
    }
    write_text(&a.out.join("sweep.csv"), &csv)?;
    write_manifest(
        &a.out,
        "sweep",
        json!({
            "tcn_counts": a.tcn_counts,
            "kernel_sets": sets,
            "encoders": a.encoders.iter().map(|&e| Encoder::from(e).to_string()).collect::<Vec<_>>(),
            "folds": a.folds,
            "train": tc,
        }),
        &[&a.data],
        vec!["sweep.csv".into()],
    )
}

fn heatmap_cmd(a: HeatmapArgs) -> Outcome<()> {
    require_file(&a.report, "report")?;
    let report = ImportanceReport::load(&a.report)?;
    if report.kind != ReportKind::Channel {
        return Err(usage(format!("{} is not a channel report", a.report.display())));
    }
    let format = match a.format {
        FormatFlag::Csv => HeatmapFormat::Csv,
        FormatFlag::Pgm => HeatmapFormat::Pgm,
        FormatFlag::Both => HeatmapFormat::Both,
    };
    create_out(&a.out)?;
    let written = export_heatmap(&report, &a.out.join("heatmap"), format)?;
    let names = written
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    write_manifest(&a.out, "export-heatmap", json!({ "format": format!("{:?}", a.format) }), &[&a.report], names)
}

fn bench_cmd(a: BenchArgs) -> Outcome<()> {
    let mc = model_config(&a.model)?;
    if a.batch_size == 0 || a.trials == 0 {
        return Err(usage("--batch-size and --trials must be positive"));
    }
    if let Some(d) = &a.data {
        require_file(d, "dataset")?;
    }
    let dataset = match &a.data {
        Some(d) => load_dataset(d)?,
        None => generate_synthetic(&SyntheticConfig {
            trials_per_class: a.trials.div_ceil(6),
            seed: a.seed,
            ..SyntheticConfig::default()
        })?
        .subset(&(0..a.trials).collect::<Vec<_>>()),
    };
    let bench = benchmark_epoch(&mc, &prepare(&dataset)?, a.batch_size, a.epochs, a.seed)?;
    create_out(&a.out)?;
    write_text(&a.out.join("bench.json"), &serde_json::to_string_pretty(&bench).map_err(runtime)?)?;
    println!(
        "{} trials, batch {}: median epoch {:.3} s",
        bench.trials, bench.batch_size, bench.median_seconds
    );
    let inputs: Vec<&Path> = a.data.iter().map(|p| p.as_path()).collect();
    write_manifest(
        &a.out,
        "bench",
        json!({ "model": mc, "trials": bench.trials, "batch_size": a.batch_size, "seed": a.seed }),
        &inputs,
        vec!["bench.json".into()],
    )
}
