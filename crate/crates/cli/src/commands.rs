use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use amr_core::augment::Strategy;
use amr_core::eval::{compare_runs, evaluate, read_report, write_report, EvalOptions, EvalReport, DEFAULT_LOW_SNR_REF};
use amr_core::model::{ModelConfig, Tldnn};
use amr_core::preprocess::ApMatrix;
use amr_core::siggen::{generate_dataset, sigf, Dataset, GenSpec, Split};
use amr_core::train::{train_loop, TrainOutcome};
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{self, parse_ratio, ExperimentConfig};
use crate::ConfigError;

pub const CHECKPOINT_FILE: &str = "model.amrc";
pub const HISTORY_FILE: &str = "history.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Parser, Debug)]
#[command(name = "amr", version, about = "Modulation recognition experiments")]
pub struct Cli {
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthesize a labelled I/Q dataset and write it as SIGF.
    Gen(GenArgs),
    /// Train a model; writes a checkpoint, the epoch history and the resolved config.
    Train(TrainArgs),
    /// Score a checkpoint on one split; writes report.json and CSVs.
    Eval(EvalArgs),
    /// Tabulate several evaluation reports against the first one.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone)]
pub struct GenArgs {
    /// Generation spec (JSON); defaults apply to missing fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output SIGF path; the sidecar `<name>.meta.json` is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override a spec field, e.g. `--set frames_per_class_per_snr=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// SIGF dataset; replaces `data` from the config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory; replaces `out_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Remove one component (repeatable).
    #[arg(long, value_enum)]
    pub ablation: Vec<Ablation>,
    #[arg(long, value_enum)]
    pub augment: Option<AugmentArg>,
    /// Substitution ratio `l / N`, as `a/b` or a decimal.
    #[arg(long)]
    pub ratio: Option<String>,
    /// Override a config field, e.g. `--set train.batch_size=64`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// SIGF dataset carrying the split assignment.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// SNR (dB) reported as the low-SNR accuracy.
    #[arg(long, default_value_t = DEFAULT_LOW_SNR_REF, allow_negative_numbers = true)]
    pub low_snr_ref: i32,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
}

#[derive(Args, Debug, Clone)]
pub struct ReportArgs {
    /// Evaluation output directories (or report.json files); the first is the baseline.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Also write the table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    NoSe,
    NoTransformer,
    NoLstm,
    NoTalkingHeads,
    NoReglu,
}

impl Ablation {
    pub fn apply(self, m: &mut ModelConfig) {
        match self {
            Ablation::NoSe => m.use_se = false,
            Ablation::NoTransformer => m.use_transformer = false,
            Ablation::NoLstm => m.use_lstm = false,
            Ablation::NoTalkingHeads => m.use_talking_heads = false,
            Ablation::NoReglu => m.use_reglu = false,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentArg {
    None,
    DiscreteSs,
    ContinuousSs,
    NoiseAdd,
}

impl From<AugmentArg> for Strategy {
    fn from(a: AugmentArg) -> Self {
        match a {
            AugmentArg::None => Strategy::None,
            AugmentArg::DiscreteSs => Strategy::DiscreteSs,
            AugmentArg::ContinuousSs => Strategy::ContinuousSs,
            AugmentArg::NoiseAdd => Strategy::NoiseAdd,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Runs one command and returns what it prints on stdout.
pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Gen(a) => {
            let ds = gen(a)?;
            Ok(format!("wrote {} frames to {}\n", ds.frames.len(), a.out.display()))
        }
        Command::Train(a) => {
            let (cfg, out) = train(a)?;
            Ok(format!(
                "trained {} epochs (stop: {}), best epoch {} val_loss {:.6}; artifacts in {}\n",
                out.history.len(),
                out.stop,
                out.best_epoch,
                out.best_val_loss,
                cfg.out_dir.display()
            ))
        }
        Command::Eval(a) => {
            let r = eval(a)?;
            let low = r.low_snr_acc.map_or("n/a".to_string(), |v| format!("{v:.4}"));
            Ok(format!(
                "max {:.4} avg {:.4} low-snr({} dB) {low} overall {:.4}; report in {}\n",
                r.max_acc,
                r.avg_acc,
                r.low_snr_ref,
                r.overall_acc,
                a.out.display()
            ))
        }
        Command::Report(a) => report(a),
    }
}

pub fn gen(args: &GenArgs) -> Result<Dataset> {
    let mut spec: GenSpec = config::load(args.spec.as_deref(), &args.sets)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    let ds = generate_dataset(&spec)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    sigf::write_iq(&args.out, &ds, Some(&spec)).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(ds)
}

/// Final configuration of a training run, after file, overrides and flags.
pub fn resolve_train_config(args: &TrainArgs) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = config::load(args.config.as_deref(), &args.sets)?;
    if let Some(d) = &args.data {
        cfg.data = Some(d.clone());
    }
    if let Some(o) = &args.out {
        cfg.out_dir = o.clone();
    }
    if let Some(s) = args.seed {
        cfg.seed = Some(s);
    }
    if let Some(e) = args.epochs {
        cfg.train.max_epochs = e;
    }
    for a in &args.ablation {
        a.apply(&mut cfg.model);
    }
    if let Some(s) = args.augment {
        cfg.train.augment.strategy = s.into();
    }
    if let Some(r) = &args.ratio {
        cfg.train.augment.ratio = parse_ratio(r)?;
    }
    cfg.resolve_seeds();
    cfg.validate()?;
    Ok(cfg)
}

/// Reads any SIGF file as A/P matrices.
pub fn read_ap(path: &Path) -> Result<Dataset<ApMatrix>> {
    let (data, _) = sigf::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(data.into_ap()?)
}

fn frame_len(ds: &Dataset<ApMatrix>) -> Result<usize> {
    let n = ds.frames.first().map(ApMatrix::len).ok_or_else(|| ConfigError("dataset has no frames".into()))?;
    if let Some(f) = ds.frames.iter().find(|f| f.len() != n) {
        return Err(ConfigError(format!("frame {} has length {}, expected {n}", f.frame_id, f.len())).into());
    }
    Ok(n)
}

pub fn train(args: &TrainArgs) -> Result<(ExperimentConfig, TrainOutcome)> {
    let mut cfg = resolve_train_config(args)?;
    let data = match &cfg.data {
        Some(path) => read_ap(path)?,
        None => generate_dataset(&cfg.generate)?.try_map(amr_core::preprocess::to_input_matrix)?,
    };
    cfg.model.num_classes = data.class_names.len();
    cfg.model.input_len = frame_len(&data)?;
    cfg.model.validate().map_err(|e| ConfigError(format!("model: {e}")))?;

    let dir = cfg.out_dir.clone();
    let created = !dir.exists();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut model: Tldnn<f32> = Tldnn::new(cfg.model.clone(), cfg.train.seed)?;
    let outcome = match train_loop(&mut model, &data, &cfg.train, Some(&dir.join(CHECKPOINT_FILE))) {
        Ok(o) => o,
        Err(e) => {
            if created {
                // only succeeds while the directory is still empty
                let _ = fs::remove_dir(&dir);
            }
            return Err(e.into());
        }
    };
    outcome.history.write_csv(&dir.join(HISTORY_FILE))?;
    fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(&cfg)? + "\n")?;
    let summary = serde_json::json!({
        "epochs": outcome.history.len(),
        "best_epoch": outcome.best_epoch,
        "best_val_loss": outcome.best_val_loss,
        "stop": outcome.stop,
        "train_frames": outcome.train_frames,
        "params": model.num_params(),
    });
    fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok((cfg, outcome))
}

pub fn eval(args: &EvalArgs) -> Result<EvalReport> {
    if args.batch_size == 0 {
        return Err(ConfigError("batch size must be >= 1".into()).into());
    }
    let model: Tldnn<f32> =
        Tldnn::load(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let data = read_ap(&args.data)?;
    if frame_len(&data)? != model.config.input_len {
        return Err(ConfigError(format!(
            "dataset frames have length {}, model expects {}",
            frame_len(&data)?,
            model.config.input_len
        ))
        .into());
    }
    let opts = EvalOptions { batch_size: args.batch_size, low_snr_ref: args.low_snr_ref, split: args.split.into() };
    let report = evaluate(&model, &data, &opts)?;
    write_report(&args.out, &report).with_context(|| format!("writing report to {}", args.out.display()))?;
    Ok(report)
}

fn run_name(path: &Path) -> String {
    let dir = if path.is_file() { path.parent().unwrap_or(path) } else { path };
    dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn fmt_opt(v: Option<f64>, signed: bool) -> String {
    match (v, signed) {
        (Some(x), true) => format!("{x:+.4}"),
        (Some(x), false) => format!("{x:.4}"),
        (None, _) => "-".into(),
    }
}

/// Summary table (one row per run, deltas against the first run) followed
/// by the per-SNR accuracy table.
pub fn report(args: &ReportArgs) -> Result<String> {
    let mut runs = Vec::with_capacity(args.runs.len());
    for p in &args.runs {
        let file = if p.is_dir() { p.join(REPORT_FILE) } else { p.clone() };
        let r = read_report(&file).with_context(|| format!("reading {}", file.display()))?;
        runs.push((run_name(p), r));
    }
    let base = &runs[0].1;
    let snrs: BTreeSet<i32> = runs.iter().flat_map(|(_, r)| r.per_snr_accuracy.keys().copied()).collect();
    let width = runs.iter().map(|(n, _)| n.len()).max().unwrap_or(3).max(3);

    let mut text = String::new();
    let mut csv = String::from("run,params,macs,max_acc,avg_acc,low_snr_acc,max_delta,avg_delta,low_snr_delta");
    for s in &snrs {
        write!(csv, ",acc_{s}")?;
    }
    csv.push('\n');
    writeln!(
        text,
        "{:<width$}  {:>9}  {:>11}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}",
        "run", "params", "MACs", "max", "avg", "low", "d_max", "d_avg", "d_low"
    )?;
    for (name, r) in &runs {
        let delta = compare_runs(base, r).ok();
        let d_max = delta.as_ref().map(|d| d.max_delta);
        let d_avg = delta.as_ref().map(|d| d.avg_delta);
        let d_low = delta.as_ref().and_then(|d| d.low_snr_delta);
        writeln!(
            text,
            "{name:<width$}  {:>9}  {:>11}  {:>8.4}  {:>8.4}  {:>8}  {:>8}  {:>8}  {:>8}",
            r.params,
            r.macs,
            r.max_acc,
            r.avg_acc,
            fmt_opt(r.low_snr_acc, false),
            fmt_opt(d_max, true),
            fmt_opt(d_avg, true),
            fmt_opt(d_low, true)
        )?;
        let blank = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        write!(
            csv,
            "{name},{},{},{},{},{},{},{},{}",
            r.params,
            r.macs,
            r.max_acc,
            r.avg_acc,
            blank(r.low_snr_acc),
            blank(d_max),
            blank(d_avg),
            blank(d_low)
        )?;
        for s in &snrs {
            write!(csv, ",{}", blank(r.per_snr_accuracy.get(s).copied()))?;
        }
        csv.push('\n');
    }

    text.push('\n');
    write!(text, "{:<width$}", "snr_db")?;
    for s in &snrs {
        write!(text, "  {s:>6}")?;
    }
    text.push('\n');
    for (name, r) in &runs {
        write!(text, "{name:<width$}")?;
        for s in &snrs {
            match r.per_snr_accuracy.get(s) {
                Some(a) => write!(text, "  {a:>6.3}")?,
                None => write!(text, "  {:>6}", "-")?,
            }
        }
        text.push('\n');
    }
    if let Some(path) = &args.csv {
        fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(text)
}
