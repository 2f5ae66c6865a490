//! Command-line front end: synthesize, process, train, tune, evaluate,
//! benchmark, and an end-to-end model comparison pipeline.
//!
//! Exit codes: 0 success, 1 runtime data failure (unreadable or too-short
//! input, missing model file), 2 usage error (bad flag, bad config file).
//! Every command is deterministic for fixed flags and seed, except the
//! latency fields of `bench` and `pipeline`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::dataset::{build_features, split, FeatureMatrix, SplitMode, SplitSpec};
use crate::eval::{ape, bench_latency, evaluate, summarize_subjects, Accuracy, Latency, Metrics};
use crate::io;
use crate::models::{self, Hyperparams, ModelArtifact, ModelKind};
use crate::signal::{HrSeries, Scenario};
use crate::sigproc::{stage2, SigprocConfig};
use crate::synth::{gen_ppg, gen_truth_hr, splitmix64, SynthConfig};
use crate::tuning::{tune, TrialResult, TuneSpec, TuningError};

/// Failure classified by exit code: usage errors exit 2, data errors exit 1.
#[derive(Debug, PartialEq)]
pub enum CliError {
    Usage(String),
    Data(String),
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

/// Parse and dispatch `std::env::args`, returning the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Process(a) => cmd_process(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Tune(a) => cmd_tune(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Bench(a) => cmd_bench(a),
        Cmd::Pipeline(a) => cmd_pipeline(a),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

#[derive(Parser)]
#[command(
    name = "pulsehr",
    version,
    about = "PPG heart-rate toolkit: synthetic recordings, signal processing, and small regression models"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic PPG recording and its 1 Hz truth heart rate
    Synth(SynthArgs),
    /// Estimate 1 Hz heart rate from a PPG recording
    Process(ProcessArgs),
    /// Fit one model with default hyperparameters
    Train(TrainArgs),
    /// Random-search hyperparameters with cross-validation, keep the best
    Tune(TuneArgs),
    /// Score a saved model on held-out rows
    Eval(EvalArgs),
    /// Measure single-prediction latency of a saved model
    Bench(BenchArgs),
    /// Full comparison: data, processing, tuned models, accuracy and latency
    Pipeline(PipelineArgs),
}

// ---------------------------------------------------------------- config file

/// Accepted `key=value` names; anything else in a config file is rejected.
const CONFIG_KEYS: &[&str] = &[
    "seed",
    "scenario",
    "duration_s",
    "fs_hz",
    "hr_start_bpm",
    "hr_min_bpm",
    "hr_max_bpm",
    "hr_slew_bpm_per_s",
    "noise_std",
    "wander_amp",
    "ma_rate_per_min",
    "ma_amp",
    "ma_dur_s",
    "channel",
    "window_s",
    "hop_s",
    "detrend_window_s",
    "min_prominence_factor",
    "max_hr_bpm",
    "z_threshold",
    "z_window_readings",
    "clamp_bound",
    "features",
    "model",
    "train_frac",
    "split",
    "iters",
    "folds",
    "reps",
    "warmup",
];

/// Defaults file: one `key=value` per line, `#` starts a comment. Flags win
/// over file values; file values win over built-in defaults.
#[derive(Debug, Default)]
struct FileConfig(HashMap<String, String>);

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("config file {}: {e}", path.display())))?;
        let mut map = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(usage(format!(
                    "config file {}: line {}: expected key=value, got {line:?}",
                    path.display(),
                    i + 1
                )));
            };
            let (key, value) = (key.trim(), value.trim());
            if !CONFIG_KEYS.contains(&key) {
                return Err(usage(format!(
                    "config file {}: line {}: unknown key {key:?}",
                    path.display(),
                    i + 1
                )));
            }
            map.insert(key.to_string(), value.to_string());
        }
        Ok(Self(map))
    }

    fn get<T>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        match self.0.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| usage(format!("config key {key}={raw:?}: {e}"))),
        }
    }
}

/// Flag if given, else config-file value, else the built-in default.
fn pick<T>(flag: Option<T>, cfg: &FileConfig, key: &str, default: T) -> Result<T, CliError>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    match flag {
        Some(v) => Ok(v),
        None => Ok(cfg.get(key)?.unwrap_or(default)),
    }
}

/// Seed precedence: `--seed` flag, config file, `PULSEHR_SEED`, then 0.
fn resolve_seed(flag: Option<u64>, cfg: &FileConfig) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(s) = cfg.get("seed")? {
        return Ok(s);
    }
    match std::env::var("PULSEHR_SEED") {
        Ok(raw) => raw
            .trim()
            .parse()
            .map_err(|e| usage(format!("PULSEHR_SEED={raw:?}: {e}"))),
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(e) => Err(usage(format!("PULSEHR_SEED: {e}"))),
    }
}

impl std::str::FromStr for SplitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chronological" => Ok(SplitMode::Chronological),
            "random" => Ok(SplitMode::Random),
            other => Err(format!(
                "unknown split mode {other:?}, expected chronological or random"
            )),
        }
    }
}

// -------------------------------------------------------------------- shared

fn read_model(path: &Path) -> Result<ModelArtifact, CliError> {
    let bytes =
        std::fs::read(path).map_err(|e| data(format!("model file {}: {e}", path.display())))?;
    models::deserialize(&bytes).map_err(|e| data(format!("model file {}: {e}", path.display())))
}

fn read_hr_pair(pphr: &Path, truth: &Path) -> Result<(HrSeries, HrSeries), CliError> {
    Ok((
        io::read_hr_csv(pphr).map_err(data)?,
        io::read_hr_csv(truth).map_err(data)?,
    ))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(data)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn split_config(
    frac: Option<f64>,
    mode: Option<SplitMode>,
    seed: u64,
    cfg: &FileConfig,
) -> Result<SplitSpec, CliError> {
    let train_frac = pick(frac, cfg, "train_frac", 0.8)?;
    if !(0.0..=1.0).contains(&train_frac) {
        return Err(usage(format!(
            "train_frac must be within [0, 1], got {train_frac}"
        )));
    }
    let mode = pick(mode, cfg, "split", SplitMode::Chronological)?;
    Ok(SplitSpec {
        train_frac,
        mode,
        seed,
    })
}

fn features_arg(flag: Option<usize>, cfg: &FileConfig) -> Result<usize, CliError> {
    let k = pick(flag, cfg, "features", 15)?;
    if k == 0 {
        return Err(usage("features must be at least 1"));
    }
    Ok(k)
}

fn map_tuning_err(e: TuningError) -> CliError {
    match e {
        TuningError::TooFewFolds(_) => usage(e),
        other => data(other),
    }
}

/// Config-file overrides for the synth knobs that have no dedicated flag in
/// the calling command.
fn apply_synth_keys(sc: &mut SynthConfig, cfg: &FileConfig) -> Result<(), CliError> {
    sc.hr_start_bpm = pick(None, cfg, "hr_start_bpm", sc.hr_start_bpm)?;
    sc.hr_bounds_bpm.0 = pick(None, cfg, "hr_min_bpm", sc.hr_bounds_bpm.0)?;
    sc.hr_bounds_bpm.1 = pick(None, cfg, "hr_max_bpm", sc.hr_bounds_bpm.1)?;
    sc.hr_max_slew_bpm_per_s = pick(None, cfg, "hr_slew_bpm_per_s", sc.hr_max_slew_bpm_per_s)?;
    sc.noise_std = pick(None, cfg, "noise_std", sc.noise_std)?;
    sc.baseline_wander_amp = pick(None, cfg, "wander_amp", sc.baseline_wander_amp)?;
    sc.ma_rate_per_min = pick(None, cfg, "ma_rate_per_min", sc.ma_rate_per_min)?;
    sc.ma_amp = pick(None, cfg, "ma_amp", sc.ma_amp)?;
    sc.ma_dur_s = pick(None, cfg, "ma_dur_s", sc.ma_dur_s)?;
    Ok(())
}

fn sigproc_from_config(cfg: &FileConfig) -> Result<SigprocConfig, CliError> {
    let mut sp = SigprocConfig::default();
    sp.channel = pick(None, cfg, "channel", sp.channel)?;
    sp.window_s = pick(None, cfg, "window_s", sp.window_s)?;
    sp.hop_s = pick(None, cfg, "hop_s", sp.hop_s)?;
    sp.detrend_window_s = pick(None, cfg, "detrend_window_s", sp.detrend_window_s)?;
    sp.min_prominence_factor = pick(
        None,
        cfg,
        "min_prominence_factor",
        sp.min_prominence_factor,
    )?;
    sp.max_hr_bpm = pick(None, cfg, "max_hr_bpm", sp.max_hr_bpm)?;
    sp.z_threshold = pick(None, cfg, "z_threshold", sp.z_threshold)?;
    sp.z_window_readings = pick(None, cfg, "z_window_readings", sp.z_window_readings)?;
    sp.clamp_bound = pick(None, cfg, "clamp_bound", sp.clamp_bound)?;
    Ok(sp)
}

fn validate_sigproc(sp: &SigprocConfig) -> Result<(), CliError> {
    let positive = [
        ("window_s", sp.window_s),
        ("hop_s", sp.hop_s),
        ("detrend_window_s", sp.detrend_window_s),
        ("max_hr_bpm", sp.max_hr_bpm),
        ("z_threshold", sp.z_threshold),
    ];
    for (name, v) in positive {
        if !(v > 0.0 && v.is_finite()) {
            return Err(usage(format!("{name} must be positive, got {v}")));
        }
    }
    if !(sp.min_prominence_factor >= 0.0 && sp.min_prominence_factor.is_finite()) {
        return Err(usage(format!(
            "min_prominence_factor must be at least 0, got {}",
            sp.min_prominence_factor
        )));
    }
    if !(0.0..1.0).contains(&sp.clamp_bound) {
        return Err(usage(format!(
            "clamp_bound must be within [0, 1), got {}",
            sp.clamp_bound
        )));
    }
    if sp.z_window_readings == 0 {
        return Err(usage("z_window_readings must be at least 1"));
    }
    if sp.hop_s > sp.window_s {
        return Err(usage(format!(
            "hop_s ({}) must not exceed window_s ({})",
            sp.hop_s, sp.window_s
        )));
    }
    Ok(())
}

// --------------------------------------------------------------------- synth

#[derive(Args)]
struct SynthArgs {
    /// Activity preset: sitting, sleeping, or daily
    #[arg(long)]
    scenario: Option<Scenario>,
    /// Recording length in seconds
    #[arg(long)]
    duration: Option<f64>,
    /// Sampling rate in Hz
    #[arg(long)]
    fs: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Starting truth heart rate in bpm
    #[arg(long)]
    hr_start: Option<f64>,
    /// Lower bound of the truth heart-rate walk
    #[arg(long)]
    hr_min: Option<f64>,
    /// Upper bound of the truth heart-rate walk
    #[arg(long)]
    hr_max: Option<f64>,
    /// Largest truth change in bpm per second
    #[arg(long)]
    slew: Option<f64>,
    /// White-noise standard deviation
    #[arg(long)]
    noise: Option<f64>,
    /// Baseline wander amplitude
    #[arg(long)]
    wander: Option<f64>,
    /// Motion-artifact bursts per minute
    #[arg(long)]
    ma_rate: Option<f64>,
    /// Motion-artifact peak amplitude
    #[arg(long)]
    ma_amp: Option<f64>,
    /// Motion-artifact burst length in seconds
    #[arg(long)]
    ma_dur: Option<f64>,
    /// Output CSV for the PPG samples
    #[arg(long)]
    out: PathBuf,
    /// Output CSV for the 1 Hz truth heart rate
    #[arg(long)]
    truth: PathBuf,
    /// key=value defaults file
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_synth(a: SynthArgs) -> Result<(), CliError> {
    let cfg = FileConfig::load(a.config.as_deref())?;
    let scenario = pick(a.scenario, &cfg, "scenario", Scenario::Daily)?;
    let mut sc = SynthConfig::for_scenario(scenario);
    sc.seed = resolve_seed(a.seed, &cfg)?;
    apply_synth_keys(&mut sc, &cfg)?;
    sc.duration_s = pick(a.duration, &cfg, "duration_s", sc.duration_s)?;
    sc.fs_hz = pick(a.fs, &cfg, "fs_hz", sc.fs_hz)?;
    if let Some(v) = a.hr_start {
        sc.hr_start_bpm = v;
    }
    if let Some(v) = a.hr_min {
        sc.hr_bounds_bpm.0 = v;
    }
    if let Some(v) = a.hr_max {
        sc.hr_bounds_bpm.1 = v;
    }
    if let Some(v) = a.slew {
        sc.hr_max_slew_bpm_per_s = v;
    }
    if let Some(v) = a.noise {
        sc.noise_std = v;
    }
    if let Some(v) = a.wander {
        sc.baseline_wander_amp = v;
    }
    if let Some(v) = a.ma_rate {
        sc.ma_rate_per_min = v;
    }
    if let Some(v) = a.ma_amp {
        sc.ma_amp = v;
    }
    if let Some(v) = a.ma_dur {
        sc.ma_dur_s = v;
    }

    // config mistakes are usage errors: `--duration 0` must exit 2
    let truth = gen_truth_hr(&sc).map_err(usage)?;
    let ppg = gen_ppg(&truth, &sc).map_err(usage)?;
    io::write_ppg_csv(&a.out, &ppg).map_err(data)?;
    io::write_hr_csv(&a.truth, &truth).map_err(data)?;
    println!(
        "synth: {} samples ({} s at {} Hz, scenario {}) -> {}; {} truth readings -> {}",
        ppg.len(),
        sc.duration_s,
        sc.fs_hz,
        scenario,
        a.out.display(),
        truth.len(),
        a.truth.display()
    );
    Ok(())
}

// ------------------------------------------------------------------- process

#[derive(Args)]
struct ProcessArgs {
    /// Input PPG CSV
    #[arg(long)]
    input: PathBuf,
    /// Output CSV for the 1 Hz processed heart rate
    #[arg(long)]
    out: PathBuf,
    /// PPG channel to process, 0-based
    #[arg(long)]
    channel: Option<usize>,
    /// Estimation window in seconds
    #[arg(long)]
    window: Option<f64>,
    /// Window step in seconds
    #[arg(long)]
    hop: Option<f64>,
    /// Detrending moving-average length in seconds
    #[arg(long)]
    detrend_window: Option<f64>,
    /// Peak prominence threshold, in rolling standard deviations
    #[arg(long)]
    prominence: Option<f64>,
    /// Physiological heart-rate ceiling in bpm
    #[arg(long)]
    max_hr: Option<f64>,
    /// Outlier threshold in z-score units
    #[arg(long)]
    z_threshold: Option<f64>,
    /// Outlier-filter trailing window in readings
    #[arg(long)]
    z_window: Option<usize>,
    /// Fractional change allowed per second
    #[arg(long)]
    clamp: Option<f64>,
    /// key=value defaults file
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_process(a: ProcessArgs) -> Result<(), CliError> {
    let cfg = FileConfig::load(a.config.as_deref())?;
    let mut sp = sigproc_from_config(&cfg)?;
    let explicit_channel = a.channel.or(cfg.get("channel")?);
    if let Some(v) = a.channel {
        sp.channel = v;
    }
    if let Some(v) = a.window {
        sp.window_s = v;
    }
    if let Some(v) = a.hop {
        sp.hop_s = v;
    }
    if let Some(v) = a.detrend_window {
        sp.detrend_window_s = v;
    }
    if let Some(v) = a.prominence {
        sp.min_prominence_factor = v;
    }
    if let Some(v) = a.max_hr {
        sp.max_hr_bpm = v;
    }
    if let Some(v) = a.z_threshold {
        sp.z_threshold = v;
    }
    if let Some(v) = a.z_window {
        sp.z_window_readings = v;
    }
    if let Some(v) = a.clamp {
        sp.clamp_bound = v;
    }
    validate_sigproc(&sp)?;

    let rec = io::read_ppg_csv(&a.input).map_err(data)?;
    // the default channel quietly falls back on single-channel recordings,
    // but an explicitly requested one has to exist
    if let Some(ch) = explicit_channel {
        if ch >= rec.channels.len() {
            return Err(data(format!(
                "channel {ch} not present, input has {} channel(s)",
                rec.channels.len()
            )));
        }
    }
    let hr = stage2(&rec, &sp).map_err(data)?;
    io::write_hr_csv(&a.out, &hr).map_err(data)?;
    println!(
        "process: {} readings at {} Hz from {:.1} s of PPG -> {}",
        hr.len(),
        hr.rate_hz,
        rec.duration_s(),
        a.out.display()
    );
    Ok(())
}

// --------------------------------------------------------------------- train

#[derive(Args)]
struct TrainArgs {
    /// Processed 1 Hz heart-rate CSV
    #[arg(long)]
    pphr: PathBuf,
    /// Truth 1 Hz heart-rate CSV
    #[arg(long)]
    truth: PathBuf,
    /// Model kind: dt, rf, knn, svr, or mlp
    #[arg(long)]
    model: Option<ModelKind>,
    /// Lagged readings per feature row
    #[arg(long)]
    features: Option<usize>,
    /// Fraction of rows used for training
    #[arg(long)]
    train_frac: Option<f64>,
    /// Row assignment: chronological or random
    #[arg(long)]
    split: Option<SplitMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output model file
    #[arg(long)]
    out: PathBuf,
    /// key=value defaults file
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let cfg = FileConfig::load(a.config.as_deref())?;
    let seed = resolve_seed(a.seed, &cfg)?;
    let kind = pick(a.model, &cfg, "model", ModelKind::Dt)?;
    let k = features_arg(a.features, &cfg)?;
    let sp = split_config(a.train_frac, a.split, seed, &cfg)?;

    let (pphr, truth) = read_hr_pair(&a.pphr, &a.truth)?;
    let fm = build_features(&pphr, &truth, k).map_err(data)?;
    let (train, _) = split(&fm, &sp).map_err(data)?;
    let hp = Hyperparams::default_for(kind);
    let (m, violation) = models::fit_lenient(&train, &hp, seed).map_err(data)?;
    if let Some(v) = violation {
        eprintln!(
            "warning: optimizer stopped at its iteration cap (KKT violation {v:.4}); saving the partial fit"
        );
    }
    let bytes = models::serialize(&m);
    std::fs::write(&a.out, &bytes).map_err(|e| data(format!("{}: {e}", a.out.display())))?;
    println!(
        "train: {kind} with k={k} on {} rows, {} bytes -> {}",
        train.len(),
        bytes.len(),
        a.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------- tune

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Random-search draws
    #[arg(long)]
    iters: Option<usize>,
    /// Cross-validation folds
    #[arg(long)]
    folds: Option<usize>,
    /// Search-report JSON path; default is the model path with .search.json
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(serde::Serialize)]
struct SearchReport<'a> {
    kind: &'a str,
    n_iter: usize,
    n_folds: usize,
    seed: u64,
    best_index: usize,
    best: &'a Hyperparams,
    trials: &'a [TrialResult],
}

fn cmd_tune(args: TuneArgs) -> Result<(), CliError> {
    let a = args.train;
    let cfg = FileConfig::load(a.config.as_deref())?;
    let seed = resolve_seed(a.seed, &cfg)?;
    let kind = pick(a.model, &cfg, "model", ModelKind::Dt)?;
    let k = features_arg(a.features, &cfg)?;
    let sp = split_config(a.train_frac, a.split, seed, &cfg)?;
    let n_iter = pick(args.iters, &cfg, "iters", 20)?;
    let n_folds = pick(args.folds, &cfg, "folds", 5)?;
    if n_iter == 0 {
        return Err(usage("iters must be at least 1"));
    }

    let (pphr, truth) = read_hr_pair(&a.pphr, &a.truth)?;
    let fm = build_features(&pphr, &truth, k).map_err(data)?;
    let (train, _) = split(&fm, &sp).map_err(data)?;
    let spec = TuneSpec {
        kind,
        n_iter,
        n_folds,
        seed,
    };
    let result = tune(&train, &spec).map_err(map_tuning_err)?;

    let bytes = models::serialize(&result.model);
    std::fs::write(&a.out, &bytes).map_err(|e| data(format!("{}: {e}", a.out.display())))?;
    let report_path = args
        .report
        .unwrap_or_else(|| a.out.with_extension("search.json"));
    let report = SearchReport {
        kind: kind.name(),
        n_iter,
        n_folds,
        seed,
        best_index: result.best_index,
        best: &result.best().hyperparams,
        trials: &result.trials,
    };
    write_json(&report_path, &report)?;
    println!(
        "tune: {kind} k={k}, best of {n_iter} draws has mean cv mape {:.3}% (trial {}), {} bytes -> {}; report -> {}",
        result.best().mean_mape_pct,
        result.best_index,
        bytes.len(),
        a.out.display(),
        report_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------- eval

#[derive(Args)]
struct EvalArgs {
    /// Saved model file
    #[arg(long)]
    model: PathBuf,
    /// Processed 1 Hz heart-rate CSV
    #[arg(long)]
    pphr: PathBuf,
    /// Truth 1 Hz heart-rate CSV
    #[arg(long)]
    truth: PathBuf,
    /// Fraction of rows reserved for training; scoring uses the rest
    #[arg(long)]
    train_frac: Option<f64>,
    /// Row assignment: chronological or random
    #[arg(long)]
    split: Option<SplitMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output metrics JSON
    #[arg(long)]
    out: PathBuf,
    /// key=value defaults file
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let cfg = FileConfig::load(a.config.as_deref())?;
    let seed = resolve_seed(a.seed, &cfg)?;
    let sp = split_config(a.train_frac, a.split, seed, &cfg)?;
    let m = read_model(&a.model)?;
    let (pphr, truth) = read_hr_pair(&a.pphr, &a.truth)?;
    let fm = build_features(&pphr, &truth, m.meta.k).map_err(data)?;
    let (_, test) = split(&fm, &sp).map_err(data)?;
    if test.is_empty() {
        return Err(data(format!(
            "train_frac {} leaves no test rows out of {}",
            sp.train_frac,
            fm.len()
        )));
    }
    let acc = evaluate(&m, &test).map_err(data)?;
    write_json(&a.out, &Metrics::default().with_accuracy(&acc))?;
    println!(
        "eval: mape {:.3}% +- {:.3}% over {} rows (baseline {:.3}%) -> {}",
        acc.mape_pct,
        acc.ape_sd_pct,
        acc.n_rows,
        acc.baseline_mape_pct,
        a.out.display()
    );
    Ok(())
}

// --------------------------------------------------------------------- bench

#[derive(Args)]
struct BenchArgs {
    /// Saved model file
    #[arg(long)]
    model: PathBuf,
    /// Processed heart-rate CSV used to build probe rows
    #[arg(long)]
    pphr: PathBuf,
    /// Timed predictions
    #[arg(long)]
    reps: Option<usize>,
    /// Untimed predictions run first
    #[arg(long)]
    warmup: Option<usize>,
    /// Output metrics JSON
    #[arg(long)]
    out: PathBuf,
    /// key=value defaults file
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_bench(a: BenchArgs) -> Result<(), CliError> {
    let cfg = FileConfig::load(a.config.as_deref())?;
    let reps = pick(a.reps, &cfg, "reps", 10_000)?;
    let warmup = pick(a.warmup, &cfg, "warmup", 1_000)?;
    let m = read_model(&a.model)?;
    let pphr = io::read_hr_csv(&a.pphr).map_err(data)?;
    // probe rows only need feature windows; the series doubles as its own
    // label track, which the benchmark never reads
    let probes = build_features(&pphr, &pphr, m.meta.k).map_err(data)?;
    let lat = bench_latency(&m, &probes, reps, warmup).map_err(data)?;
    write_json(&a.out, &Metrics::default().with_latency(&lat))?;
    println!(
        "bench: median {:.3} us, mean {:.3} us, p99 {:.3} us over {} reps -> {}",
        lat.median_us,
        lat.mean_us,
        lat.p99_us,
        lat.reps,
        a.out.display()
    );
    Ok(())
}

// ------------------------------------------------------------------ pipeline

#[derive(Args)]
struct PipelineArgs {
    /// Activity preset for synthetic input
    #[arg(long, conflicts_with = "ppg")]
    scenario: Option<Scenario>,
    /// Synthetic recording length in seconds
    #[arg(long, conflicts_with = "ppg")]
    duration: Option<f64>,
    /// Synthetic sampling rate in Hz
    #[arg(long, conflicts_with = "ppg")]
    fs: Option<f64>,
    /// Recorded PPG CSV; replaces synthesis and requires --truth
    #[arg(long, requires = "truth")]
    ppg: Option<PathBuf>,
    /// Truth heart-rate CSV accompanying --ppg
    #[arg(long, requires = "ppg")]
    truth: Option<PathBuf>,
    /// Comma-separated feature counts, one table column each
    #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,10,15")]
    features: Vec<usize>,
    /// Comma-separated model kinds, one table row each
    #[arg(long, value_delimiter = ',', default_value = "dt,rf,knn,svr,mlp")]
    models: Vec<ModelKind>,
    /// Random-search draws per cell
    #[arg(long)]
    iters: Option<usize>,
    /// Cross-validation folds
    #[arg(long)]
    folds: Option<usize>,
    /// Fraction of rows used for training
    #[arg(long)]
    train_frac: Option<f64>,
    /// Timed predictions per latency measurement
    #[arg(long)]
    reps: Option<usize>,
    /// Untimed predictions before timing starts
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for comparison tables and trace CSVs
    #[arg(long)]
    out_dir: PathBuf,
    /// key=value defaults file
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Default synthetic length for `pipeline`, sized so the stock feature list
/// clears the 5-fold search's row requirement with margin.
const PIPELINE_DURATION_S: f64 = 900.0;

struct Cell {
    kind: ModelKind,
    k: usize,
    acc: Accuracy,
    baseline_sd_pct: f64,
    hyperparams: Hyperparams,
    artifact: ModelArtifact,
    test: FeatureMatrix,
    latency: Option<Latency>,
}

#[derive(serde::Serialize)]
struct SigprocRow {
    k: usize,
    mape_pct: f64,
    ape_sd_pct: f64,
    n_rows: usize,
}

#[derive(serde::Serialize)]
struct CellReport<'a> {
    model: &'a str,
    k: usize,
    mape_pct: f64,
    ape_sd_pct: f64,
    n_rows: usize,
    model_size_bytes: u64,
    baseline_mape_pct: f64,
    latency_mean_us: f64,
    latency_median_us: f64,
    latency_p99_us: f64,
    hyperparams: &'a Hyperparams,
}

#[derive(serde::Serialize)]
struct Comparison<'a> {
    seed: u64,
    n_iter: usize,
    n_folds: usize,
    train_frac: f64,
    features: &'a [usize],
    models: Vec<&'a str>,
    sigproc: &'a [SigprocRow],
    cells: Vec<CellReport<'a>>,
}

fn run_cell(
    pphr: &HrSeries,
    truth: &HrSeries,
    kind: ModelKind,
    k: usize,
    n_iter: usize,
    n_folds: usize,
    base_split: &SplitSpec,
    cell_seed: u64,
) -> Result<Cell, CliError> {
    let fm = build_features(pphr, truth, k).map_err(data)?;
    let (train, test) = split(&fm, base_split).map_err(data)?;
    if test.is_empty() {
        return Err(data(format!(
            "train_frac {} leaves no test rows at k={k}",
            base_split.train_frac
        )));
    }
    let spec = TuneSpec {
        kind,
        n_iter,
        n_folds,
        seed: cell_seed,
    };
    let result = tune(&train, &spec).map_err(map_tuning_err)?;
    let acc = evaluate(&result.model, &test).map_err(data)?;
    let baseline: Vec<f64> = (0..test.len()).map(|i| test.row(i)[k - 1]).collect();
    let apes = ape(&baseline, test.labels()).map_err(data)?;
    let (_, baseline_sd_pct) = summarize_subjects(&apes).map_err(data)?;
    Ok(Cell {
        kind,
        k,
        acc,
        baseline_sd_pct,
        hyperparams: result.best().hyperparams.clone(),
        artifact: result.model,
        test,
        latency: None,
    })
}

fn write_trace(path: &Path, cell: &Cell) -> Result<(), CliError> {
    let mut out = String::from("t_s,truth_bpm,pred_bpm\n");
    for i in 0..cell.test.len() {
        let pred = models::predict(&cell.artifact, cell.test.row(i)).map_err(data)?;
        writeln!(out, "{},{},{}", cell.test.time(i), cell.test.label(i), pred).unwrap();
    }
    std::fs::write(path, out).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn write_sigproc_trace(path: &Path, cell: &Cell) -> Result<(), CliError> {
    let mut out = String::from("t_s,truth_bpm,pphr_bpm\n");
    for i in 0..cell.test.len() {
        let reading = cell.test.row(i)[cell.k - 1];
        writeln!(
            out,
            "{},{},{}",
            cell.test.time(i),
            cell.test.label(i),
            reading
        )
        .unwrap();
    }
    std::fs::write(path, out).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn render_table(
    features: &[usize],
    models: &[ModelKind],
    sigproc: &[SigprocRow],
    cells: &[Cell],
) -> String {
    const CELL_W: usize = 16;
    let k_last = *features.last().expect("non-empty feature list");
    let mut out = String::new();

    let mut header = format!("{:<8}", "model");
    for k in features {
        write!(header, " {:>CELL_W$}", format!("k={k}")).unwrap();
    }
    write!(header, " {:>8} {:>8}", "size_B", "med_us").unwrap();
    writeln!(out, "{header}").unwrap();
    writeln!(out, "{}", "-".repeat(header.len())).unwrap();

    let mut row = format!("{:<8}", "sigproc");
    for s in sigproc {
        let cell = format!("{:.2}% +- {:.2}%", s.mape_pct, s.ape_sd_pct);
        write!(row, " {cell:>CELL_W$}").unwrap();
    }
    write!(row, " {:>8} {:>8}", "-", "-").unwrap();
    writeln!(out, "{row}").unwrap();

    for &kind in models {
        let mut row = format!("{:<8}", kind.name());
        let mut size_b = 0;
        let mut med_us = 0.0;
        for &k in features {
            let cell = cells
                .iter()
                .find(|c| c.kind == kind && c.k == k)
                .expect("cell for every (model, k)");
            let text = format!("{:.2}% +- {:.2}%", cell.acc.mape_pct, cell.acc.ape_sd_pct);
            write!(row, " {text:>CELL_W$}").unwrap();
            if k == k_last {
                size_b = cell.acc.model_size_bytes;
                med_us = cell.latency.as_ref().map_or(0.0, |l| l.median_us);
            }
        }
        write!(row, " {size_b:>8} {med_us:>8.2}").unwrap();
        writeln!(out, "{row}").unwrap();
    }
    writeln!(
        out,
        "\nsize_B and med_us are for k={k_last}; latency varies run to run."
    )
    .unwrap();
    out
}

fn cmd_pipeline(a: PipelineArgs) -> Result<(), CliError> {
    let cfg = FileConfig::load(a.config.as_deref())?;
    let seed = resolve_seed(a.seed, &cfg)?;
    if a.features.is_empty() {
        return Err(usage("need at least one feature count"));
    }
    if a.features.contains(&0) {
        return Err(usage("feature counts must be at least 1"));
    }
    if a.models.is_empty() {
        return Err(usage("need at least one model kind"));
    }
    let n_iter = pick(a.iters, &cfg, "iters", 20)?;
    let n_folds = pick(a.folds, &cfg, "folds", 5)?;
    if n_iter == 0 {
        return Err(usage("iters must be at least 1"));
    }
    let base_split = split_config(a.train_frac, None, seed, &cfg)?;
    let reps = pick(a.reps, &cfg, "reps", 10_000)?;
    let warmup = pick(a.warmup, &cfg, "warmup", 1_000)?;

    let (ppg, truth) = match &a.ppg {
        Some(ppg_path) => {
            let truth_path = a.truth.as_ref().expect("clap enforces --truth with --ppg");
            (
                io::read_ppg_csv(ppg_path).map_err(data)?,
                io::read_hr_csv(truth_path).map_err(data)?,
            )
        }
        None => {
            let scenario = pick(a.scenario, &cfg, "scenario", Scenario::Daily)?;
            let mut sc = SynthConfig::for_scenario(scenario);
            sc.seed = seed;
            apply_synth_keys(&mut sc, &cfg)?;
            sc.duration_s = pick(a.duration, &cfg, "duration_s", PIPELINE_DURATION_S)?;
            sc.fs_hz = pick(a.fs, &cfg, "fs_hz", sc.fs_hz)?;
            let truth = gen_truth_hr(&sc).map_err(usage)?;
            let ppg = gen_ppg(&truth, &sc).map_err(usage)?;
            (ppg, truth)
        }
    };
    let sp = sigproc_from_config(&cfg)?;
    validate_sigproc(&sp)?;
    let pphr = stage2(&ppg, &sp).map_err(data)?;

    // one job per (model, k) cell, each tuning with its own derived seed so
    // cells draw independent hyperparameters but stay reproducible
    let features = &a.features;
    let jobs: Vec<(ModelKind, usize, u64)> = a
        .models
        .iter()
        .enumerate()
        .flat_map(|(mi, &kind)| {
            features.iter().enumerate().map(move |(ki, &k)| {
                let idx = (mi * features.len() + ki) as u64;
                (kind, k, splitmix64(seed ^ splitmix64(idx + 1)))
            })
        })
        .collect();
    let results: Vec<Result<Cell, CliError>> = jobs
        .par_iter()
        .map(|&(kind, k, cell_seed)| {
            run_cell(
                &pphr, &truth, kind, k, n_iter, n_folds, &base_split, cell_seed,
            )
        })
        .collect();
    let mut cells = Vec::with_capacity(results.len());
    for r in results {
        cells.push(r?);
    }

    // latency is timed sequentially so cells do not contend for cores
    for cell in &mut cells {
        let lat = bench_latency(&cell.artifact, &cell.test, reps, warmup).map_err(data)?;
        cell.latency = Some(lat);
    }

    // the no-model reference row: the latest processed reading, scored on
    // the same test rows as the models at each k
    let first_kind = a.models[0];
    let sigproc: Vec<SigprocRow> = a
        .features
        .iter()
        .map(|&k| {
            let cell = cells
                .iter()
                .find(|c| c.kind == first_kind && c.k == k)
                .expect("cell for first model at every k");
            SigprocRow {
                k,
                mape_pct: cell.acc.baseline_mape_pct,
                ape_sd_pct: cell.baseline_sd_pct,
                n_rows: cell.acc.n_rows,
            }
        })
        .collect();

    std::fs::create_dir_all(&a.out_dir)
        .map_err(|e| data(format!("{}: {e}", a.out_dir.display())))?;
    for cell in &cells {
        let name = format!("trace_{}_k{}.csv", cell.kind.name(), cell.k);
        write_trace(&a.out_dir.join(name), cell)?;
    }
    let k_last = *a.features.last().expect("non-empty feature list");
    let sig_cell = cells
        .iter()
        .find(|c| c.kind == first_kind && c.k == k_last)
        .expect("cell for first model at last k");
    write_sigproc_trace(&a.out_dir.join("trace_sigproc.csv"), sig_cell)?;

    let table = render_table(&a.features, &a.models, &sigproc, &cells);
    let table_path = a.out_dir.join("comparison.txt");
    std::fs::write(&table_path, &table).map_err(|e| data(format!("{}: {e}", table_path.display())))?;

    let comparison = Comparison {
        seed,
        n_iter,
        n_folds,
        train_frac: base_split.train_frac,
        features: &a.features,
        models: a.models.iter().map(|m| m.name()).collect(),
        sigproc: &sigproc,
        cells: cells
            .iter()
            .map(|c| {
                let lat = c.latency.as_ref().expect("latency measured for every cell");
                CellReport {
                    model: c.kind.name(),
                    k: c.k,
                    mape_pct: c.acc.mape_pct,
                    ape_sd_pct: c.acc.ape_sd_pct,
                    n_rows: c.acc.n_rows,
                    model_size_bytes: c.acc.model_size_bytes,
                    baseline_mape_pct: c.acc.baseline_mape_pct,
                    latency_mean_us: lat.mean_us,
                    latency_median_us: lat.median_us,
                    latency_p99_us: lat.p99_us,
                    hyperparams: &c.hyperparams,
                }
            })
            .collect(),
    };
    write_json(&a.out_dir.join("comparison.json"), &comparison)?;

    print!("{table}");
    println!(
        "pipeline: {} cells over {} test-windowed rows -> {}",
        cells.len(),
        sig_cell.acc.n_rows,
        a.out_dir.display()
    );
    Ok(())
}
