//! `nmslab`: synthetic data, GreedyNMS, rescoring network training and
//! evaluation as a plain-file pipeline.

mod error;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use nmslab::eval::{self, evaluate, parse_bins, EvalConfig, EvalReport, OcclusionBin};
use nmslab::gnet::{checkpoint, rescore, GnetConfig, GnetModel};
use nmslab::nms::{apply_nms, mark_suppressed, parse_thetas, threshold_sweep_columns, DEFAULT_PREFILTER_THETA};
use nmslab::synth::{generate_dataset, Preset, PRESET_NAMES};
use nmslab::trainer::{history_csv, sidecar_path, TrainConfig, Trainer};
use nmslab::Dataset;

use error::{CliError, Result};
use output::{write_atomic, Outputs};

#[derive(Parser, Debug)]
#[command(name = "nmslab", version, about = "Non-maximum suppression laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset of ground truth and raw detections.
    Synth(SynthArgs),
    /// Apply GreedyNMS to a dataset.
    Nms(NmsArgs),
    /// Train a rescoring network.
    Train(TrainArgs),
    /// Replace detection scores with those of a trained network.
    Rescore(RescoreArgs),
    /// Match detections against ground truth and report AP.
    Eval(EvalArgs),
    /// Evaluate GreedyNMS over a range of thresholds.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Shipped preset name (sparse, crowded, multiclass-8) or a preset TOML file.
    #[arg(long, default_value = "crowded")]
    preset: String,
    /// Number of images to generate.
    #[arg(long)]
    images: usize,
    /// Dataset seed; image k is drawn from stream k of this seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSONL path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct NmsArgs {
    /// IoU threshold in [0,1); a detection is suppressed when its IoU with a kept one exceeds it.
    #[arg(long, required_unless_present = "prefilter", conflicts_with = "prefilter")]
    theta: Option<f64>,
    /// Use the pre-filter threshold 0.8 instead of --theta.
    #[arg(long)]
    prefilter: bool,
    /// Only suppress among detections of the same class [default: on for multi-class data].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    class_aware: Option<bool>,
    /// Keep suppressed detections and record their suppressor in `suppressed_by`.
    #[arg(long)]
    mark_only: bool,
    /// Input JSONL path.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output JSONL path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training dataset JSONL.
    #[arg(long)]
    data: PathBuf,
    /// Validation dataset JSONL, evaluated every `eval_every` iterations.
    #[arg(long)]
    val: Option<PathBuf>,
    /// TOML file with optional [model] and [train] tables.
    #[arg(long, conflicts_with = "resume")]
    config: Option<PathBuf>,
    /// Resume from a checkpoint written by a previous run (its `.json` sidecar must exist).
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Per-iteration history CSV [default: <out>.history.csv].
    #[arg(long)]
    history: Option<PathBuf>,
    /// Print progress to stderr every N iterations (0 disables).
    #[arg(long, default_value_t = 1000)]
    log_every: u64,
}

#[derive(Args, Debug)]
struct RescoreArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Input JSONL path.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output JSONL path.
    #[arg(long)]
    out: PathBuf,
    /// GreedyNMS threshold applied before rescoring.
    #[arg(long, default_value_t = DEFAULT_PREFILTER_THETA, conflicts_with = "no_prefilter")]
    prefilter: f64,
    /// Rescore every input detection without pre-filtering.
    #[arg(long)]
    no_prefilter: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Input JSONL path (raw, GreedyNMS'd or rescored; evaluated as is).
    #[arg(long = "in")]
    input: PathBuf,
    /// Occlusion bin edges.
    #[arg(long, default_value = "0,0.5,1")]
    bins: String,
    /// IoU criteria as `start:step:end` or a comma separated list.
    #[arg(long, default_value = "0.5:0.05:0.95")]
    criteria: String,
    /// Output JSON report.
    #[arg(long)]
    report: PathBuf,
    /// Precision/recall curve CSV [default: <report>.pr.csv].
    #[arg(long)]
    pr_csv: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Metric {
    /// AP at IoU 0.5.
    Ap50,
    /// AP averaged over IoU 0.5:0.05:0.95.
    Ap,
}

impl Metric {
    fn name(self) -> &'static str {
        match self {
            Metric::Ap50 => "ap50",
            Metric::Ap => "ap",
        }
    }

    fn criteria(self) -> Vec<f64> {
        match self {
            Metric::Ap50 => vec![0.5],
            Metric::Ap => eval::coco_criteria(),
        }
    }

    fn read(self, summary: &eval::ApSummary) -> f64 {
        match self {
            Metric::Ap50 => summary.ap(0.5).unwrap_or(0.0),
            Metric::Ap => summary.ap_range,
        }
    }
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Input JSONL path (raw detections).
    #[arg(long = "in")]
    input: PathBuf,
    /// Thresholds as `start:step:end` or a comma separated list.
    #[arg(long, default_value = "0:0.05:0.95")]
    thetas: String,
    #[arg(long, value_enum, default_value = "ap50")]
    metric: Metric,
    /// Occlusion bin edges; each bin adds a column. Empty for overall only.
    #[arg(long, default_value = "0,0.5,1")]
    bins: String,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Nms(a) => nms_cmd(a),
        Command::Train(a) => train(a),
        Command::Rescore(a) => rescore_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Sweep(a) => sweep(a),
    }
}

fn load_data(path: &Path) -> Result<Dataset> {
    let data = Dataset::read_jsonl(path)?;
    data.validate()?;
    Ok(data)
}

fn jsonl(data: &Dataset) -> Vec<u8> {
    let mut buf = Vec::new();
    data.write_jsonl(&mut buf).expect("writing to memory");
    buf
}

fn to_json(value: &impl serde::Serialize) -> serde_json::Value {
    serde_json::to_value(value).expect("serializable")
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

fn synth(a: SynthArgs) -> Result<()> {
    let preset = match Preset::named(&a.preset) {
        Some(p) => p,
        None if Path::new(&a.preset).is_file() => {
            let path = Path::new(&a.preset);
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            Preset::from_toml(&text)?
        }
        None => {
            return Err(CliError::Usage(format!(
                "unknown preset '{}' (expected one of {} or a TOML file)",
                a.preset,
                PRESET_NAMES.join(", ")
            )))
        }
    };
    let data = generate_dataset(&preset, a.images, a.seed)?;
    let mut out = Outputs::new("synth");
    out.add(&a.out, &jsonl(&data))?;
    out.commit(
        &a.out,
        json!({ "preset": a.preset, "images": a.images, "resolved": to_json(&preset) }),
        vec![],
        Some(a.seed),
        Some(json!({ "ground_truths": data.num_ground_truths(), "detections": data.num_detections() })),
    )
}

fn check_theta(theta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&theta) {
        return Err(CliError::Usage(format!("theta {theta} outside [0,1)")));
    }
    Ok(())
}

fn nms_cmd(a: NmsArgs) -> Result<()> {
    let theta = a.theta.unwrap_or(DEFAULT_PREFILTER_THETA);
    check_theta(theta)?;
    let data = load_data(&a.input)?;
    let class_aware = a.class_aware.unwrap_or(data.num_classes > 1);
    let result = if a.mark_only {
        Dataset::new(
            data.images.iter().map(|r| mark_suppressed(r, theta, class_aware)).collect(),
            data.num_classes,
        )
    } else {
        apply_nms(&data, theta, class_aware)
    };
    let mut out = Outputs::new("nms");
    out.add(&a.out, &jsonl(&result))?;
    out.commit(
        &a.out,
        json!({ "theta": theta, "class_aware": class_aware, "mark_only": a.mark_only }),
        vec![a.input],
        None,
        Some(json!({ "detections_in": data.num_detections(), "detections_out": result.num_detections() })),
    )
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    #[serde(default)]
    model: toml::Table,
    #[serde(default)]
    train: TrainConfig,
}

fn read_train_file(path: Option<&Path>, num_classes: usize) -> Result<(GnetConfig, TrainConfig)> {
    let file: TrainFile = match path {
        None => TrainFile::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            toml::from_str(&text).map_err(|source| CliError::Toml {
                path: path.to_owned(),
                source,
            })?
        }
    };
    let mut model = file.model;
    model
        .entry("num_classes")
        .or_insert(toml::Value::Integer(num_classes as i64));
    let model: GnetConfig = model.try_into().map_err(|source| CliError::Toml {
        path: path.map(Path::to_owned).unwrap_or_default(),
        source,
    })?;
    model.validate()?;
    file.train.validate()?;
    Ok((model, file.train))
}

fn train(a: TrainArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    let val = a.val.as_deref().map(load_data).transpose()?;
    let mut trainer = match &a.resume {
        Some(ckpt) => Trainer::<f64>::load_checkpoint(ckpt, &data, val.as_ref())?,
        None => {
            let (model_config, train_config) = read_train_file(a.config.as_deref(), data.num_classes)?;
            let model = GnetModel::new(model_config)?;
            Trainer::new(model, &data, val.as_ref(), train_config)?
        }
    };
    let resume_file = suffixed(&a.out, ".resume");
    let total = trainer.config().iterations;
    let log_every = a.log_every;
    let mut logged = trainer.iteration();
    while trainer.iteration() < total {
        let until = if log_every > 0 {
            (trainer.iteration() / log_every + 1) * log_every
        } else {
            total
        };
        trainer.run_until(until.min(total), |t| save_resumable(t, &resume_file))?;
        if log_every > 0 && trainer.iteration() > logged {
            logged = trainer.iteration();
            eprintln!(
                "iteration {logged}/{total} loss(ema) {:.5}",
                trainer.ema_loss().unwrap_or(f64::NAN)
            );
        }
    }

    let mut ckpt = Vec::new();
    checkpoint::write_checkpoint(trainer.model(), Some(trainer.adam()), &mut ckpt)?;
    let sidecar = serde_json::to_vec_pretty(&trainer.sidecar()).map_err(nmslab::Error::from)?;
    let history_path = a.history.clone().unwrap_or_else(|| suffixed(&a.out, ".history.csv"));
    let mut out = Outputs::new("train");
    out.add(&a.out, &ckpt)?;
    out.add(&sidecar_path(&a.out), &sidecar)?;
    out.add(&history_path, history_csv(trainer.history()).as_bytes())?;
    let mut inputs = vec![a.data.clone()];
    inputs.extend(a.val.clone());
    inputs.extend(a.config.clone());
    inputs.extend(a.resume.clone());
    let seed = trainer.config().seed;
    out.commit(
        &a.out,
        json!({ "model": to_json(trainer.model().config()), "train": to_json(trainer.config()) }),
        inputs,
        Some(seed),
        Some(json!({
            "iterations": trainer.iteration(),
            "ema_loss": trainer.ema_loss(),
            "parameters": trainer.model().num_parameters(),
        })),
    )?;
    for p in [sidecar_path(&resume_file), resume_file] {
        let _ = std::fs::remove_file(p);
    }
    Ok(())
}

/// Periodic resumable state; the sidecar goes first so a checkpoint file is
/// never newer than the sidecar describing it.
fn save_resumable(trainer: &Trainer<f64>, path: &Path) -> nmslab::Result<()> {
    let io = |e: CliError| nmslab::Error::Checkpoint(e.to_string());
    let sidecar = serde_json::to_vec_pretty(&trainer.sidecar())?;
    let mut ckpt = Vec::new();
    checkpoint::write_checkpoint(trainer.model(), Some(trainer.adam()), &mut ckpt)?;
    write_atomic(&sidecar_path(path), &sidecar).map_err(io)?;
    write_atomic(path, &ckpt).map_err(io)
}

fn rescore_cmd(a: RescoreArgs) -> Result<()> {
    let prefilter = (!a.no_prefilter).then_some(a.prefilter);
    if let Some(t) = prefilter {
        check_theta(t)?;
    }
    let model = checkpoint::load::<f64>(&a.model)?.model;
    let data = load_data(&a.input)?;
    let filtered = match prefilter {
        Some(t) => apply_nms(&data, t, data.num_classes > 1),
        None => data,
    };
    let rescored = rescore(&model, &filtered)?;
    let mut out = Outputs::new("rescore");
    out.add(&a.out, &jsonl(&rescored))?;
    out.commit(
        &a.out,
        json!({ "prefilter": prefilter, "model": to_json(model.config()) }),
        vec![a.model, a.input],
        None,
        Some(json!({ "detections": rescored.num_detections() })),
    )
}

fn parse_criteria(spec: &str) -> Result<Vec<f64>> {
    let criteria = parse_thetas(spec)?;
    if let Some(c) = criteria.iter().find(|c| !(**c > 0.0 && **c <= 1.0)) {
        return Err(CliError::Usage(format!("IoU criterion {c} outside (0,1]")));
    }
    Ok(criteria)
}

fn parse_bin_list(spec: &str) -> Result<Vec<OcclusionBin>> {
    if spec.trim().is_empty() {
        Ok(vec![])
    } else {
        Ok(parse_bins(spec)?)
    }
}

fn print_report(report: &EvalReport) {
    for a in &report.overall.ap_at {
        println!("AP@{:.2} {:.4}", a.criterion, a.ap);
    }
    println!("AP@[{}] {:.4}", range_label(&report.criteria), report.overall.ap_range);
    for b in &report.per_occlusion_bin {
        println!(
            "occlusion [{}, {}{} gt {} AP@0.50 {}",
            b.bin.lo,
            b.bin.hi,
            if b.bin.hi >= 1.0 { "]" } else { ")" },
            b.num_gt,
            b.summary.ap(0.5).map_or("-".into(), |v| format!("{v:.4}"))
        );
    }
}

fn range_label(criteria: &[f64]) -> String {
    match (criteria.first(), criteria.last()) {
        (Some(a), Some(b)) => format!("{a}:{b}"),
        _ => String::new(),
    }
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let criteria = parse_criteria(&a.criteria)?;
    let bins = parse_bin_list(&a.bins)?;
    let data = load_data(&a.input)?;
    let report = evaluate(&data, None, &EvalConfig { criteria, bins })?;
    print_report(&report);
    let mut json = serde_json::to_vec_pretty(&report).map_err(nmslab::Error::from)?;
    json.push(b'\n');
    let pr_path = a.pr_csv.clone().unwrap_or_else(|| suffixed(&a.report, ".pr.csv"));
    let mut out = Outputs::new("eval");
    out.add(&a.report, &json)?;
    out.add(&pr_path, report.pr_csv().as_bytes())?;
    out.commit(
        &a.report,
        json!({ "criteria": report.criteria, "bins": a.bins }),
        vec![a.input],
        None,
        None,
    )
}

fn sweep(a: SweepArgs) -> Result<()> {
    let thetas = parse_thetas(&a.thetas)?;
    for &t in &thetas {
        check_theta(t)?;
    }
    let bins = parse_bin_list(&a.bins)?;
    eval::check_bins(&bins)?;
    let data = load_data(&a.input)?;
    let metric = a.metric;
    let config = EvalConfig {
        criteria: metric.criteria(),
        bins: bins.clone(),
    };
    let columns = 1 + bins.len();
    let tables = threshold_sweep_columns(&data, &thetas, columns, |d| {
        let report = evaluate(d, None, &config).expect("bins validated");
        std::iter::once(metric.read(&report.overall))
            .chain(report.per_occlusion_bin.iter().map(|b| metric.read(&b.summary)))
            .collect()
    })?;
    let mut names = vec![metric.name().to_owned()];
    names.extend(bins.iter().map(|b| format!("{}_occ_{}_{}", metric.name(), b.lo, b.hi)));

    let mut csv = format!("theta,{}\n", names.join(","));
    for (k, &t) in thetas.iter().enumerate() {
        let row: Vec<String> = tables.iter().map(|tab| tab.rows[k].1.to_string()).collect();
        csv.push_str(&format!("{t},{}\n", row.join(",")));
    }
    let best: Vec<_> = names
        .iter()
        .zip(&tables)
        .map(|(n, t)| {
            println!("{n}: best theta {} value {:.4}", t.best_theta, t.best_value);
            json!({ "column": n, "theta": t.best_theta, "value": t.best_value })
        })
        .collect();
    let mut out = Outputs::new("sweep");
    out.add(&a.out, csv.as_bytes())?;
    out.commit(
        &a.out,
        json!({ "thetas": thetas, "metric": metric.name(), "bins": a.bins, "class_aware": data.num_classes > 1 }),
        vec![a.input],
        None,
        Some(json!({ "best": best })),
    )
}
