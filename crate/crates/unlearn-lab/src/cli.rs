//! Configuration-driven command-line front end.
//!
//! Subcommands: `pretrain`, `retrain`, `unlearn`, `variance-lab`, and
//! `report`. The first four read a JSON config (unknown keys are errors),
//! write every artifact into `--out`, and follow a manifest-first
//! discipline: `manifest.json` is written with status `running` before any
//! compute and finalized (`complete` / `failed`) afterwards, listing every
//! output file. Reruns with the same config produce byte-identical CSVs.
//!
//! On failure a machine-readable error object `{code, message, context}`
//! is printed to standard error and the process exits nonzero. The
//! `UNLEARN_LAB_LOG` environment variable (`error`, `info`, `debug`)
//! controls log verbosity.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::data::{gen_blobs, load_idx, split_forget, BlobSpec, DatasetManifest, DatasetSplit};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, evaluate_checkpoint, AggregateReport, EvalReport, MiaAudit};
use crate::nn::MlpModel;
use crate::optim::{OptimizerConfig, Phase};
use crate::rng::derive_seed;
use crate::unlearn::{
    pretrain, retrain, run_unlearn, DiagnosticTrace, TrainSummary, UnlearnConfig, UnlearnTask,
};
use crate::variance_lab::{
    bound_recursion, measure_correlation, simulate_scheme, verify_lemma, verify_theorem,
    NoiseSpec, QuadraticObjective, SchemeConfig, SchemeKind, GRID_ALPHAS, GRID_LIPSCHITZ,
    GRID_TAUS,
};

/// One-line statement of the membership-attack protocol, embedded in every
/// run's outputs so numbers are comparable across runs of this artifact.
const MIA_PROTOCOL: &str = "entropy threshold maximizing balanced accuracy; member = entropy \
     below threshold unless the flipped orientation scores higher; calibrated on a seeded \
     retain sample (members) and half the test rows (non-members), never on forget rows; \
     score = fraction of forget rows classified member";

#[derive(Parser)]
#[command(
    name = "unlearn-lab",
    version,
    about = "Machine-unlearning optimization laboratory: alternating dual-optimizer \
             unlearning, evaluation metrics, and momentum-variance verification."
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the initial model on the full training split.
    Pretrain(RunArgs),
    /// Train the exact-unlearning reference per trial (retain rows only).
    Retrain(RunArgs),
    /// Run the alternating unlearning pipeline over all trials.
    Unlearn(RunArgs),
    /// Evaluate variance bounds, the ordering sweep, and noise probes.
    VarianceLab(RunArgs),
    /// Summarize run directories into a comparison table.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to the JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Override the configuration's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for trial parallelism (0 = one per CPU).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Retrain run directory supplying reference metrics for gap columns.
    #[arg(long)]
    rt_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories containing aggregate.json.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Directory for report.csv / report.txt (stdout only when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Process entry point: parse, dispatch, render errors as JSON.
pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    let command_name = match &cli.command {
        Command::Pretrain(_) => "pretrain",
        Command::Retrain(_) => "retrain",
        Command::Unlearn(_) => "unlearn",
        Command::VarianceLab(_) => "variance-lab",
        Command::Report(_) => "report",
    };
    if let Err(e) = init_logging() {
        emit_error_json(&e, command_name);
        return ExitCode::FAILURE;
    }
    let result = match cli.command {
        Command::Pretrain(args) => cmd_pretrain(&args),
        Command::Retrain(args) => cmd_retrain(&args),
        Command::Unlearn(args) => cmd_unlearn(&args),
        Command::VarianceLab(args) => cmd_variance_lab(&args),
        Command::Report(args) => cmd_report(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            emit_error_json(&e, command_name);
            ExitCode::FAILURE
        }
    }
}

fn init_logging() -> Result<()> {
    let level = match std::env::var("UNLEARN_LAB_LOG") {
        Err(std::env::VarError::NotPresent) => "error".to_string(),
        Err(e) => return Err(Error::Config(format!("UNLEARN_LAB_LOG is not valid UTF-8: {e}"))),
        Ok(v) => v,
    };
    let filter = match level.as_str() {
        "error" => log::LevelFilter::Error,
        "info" => log::LevelFilter::Info,
        "debug" => log::LevelFilter::Debug,
        other => {
            return Err(Error::Config(format!(
                "UNLEARN_LAB_LOG must be one of error, info, debug; got {other:?}"
            )))
        }
    };
    // try_init: tests may initialize more than once in one process.
    let _ = env_logger::Builder::new().filter_level(filter).try_init();
    Ok(())
}

fn emit_error_json(e: &Error, command: &str) {
    let obj = json!({
        "code": e.code(),
        "message": e.to_string(),
        "context": { "command": command },
    });
    eprintln!("{obj}");
}

// ------------------------------------------------------------------
// Configuration schema
// ------------------------------------------------------------------

/// Training hyperparameters for pretrain / retrain.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_train_batch")]
    pub batch_size: usize,
    #[serde(default = "default_train_optim")]
    pub optim: OptimizerConfig,
}

fn default_epochs() -> usize {
    30
}
fn default_train_batch() -> usize {
    64
}
fn default_train_optim() -> OptimizerConfig {
    OptimizerConfig::sgd(0.05, 0.9)
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: default_epochs(),
            batch_size: default_train_batch(),
            optim: default_train_optim(),
        }
    }
}

/// Metric options.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// Member-calibration sample size for the membership attack.
    #[serde(default = "default_calib")]
    pub mia_calib_size: usize,
}

fn default_calib() -> usize {
    250
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { mia_calib_size: default_calib() }
    }
}

/// IDX dataset file quadruple.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

/// Top-level experiment configuration for pretrain / retrain / unlearn.
///
/// Exactly one task source must be given: `preset`, `blobs`, or `idx`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Named task preset; currently `blobs-10pct`.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub blobs: Option<BlobSpec>,
    #[serde(default)]
    pub idx: Option<IdxPaths>,
    /// Fraction of training rows tagged forget, per trial.
    #[serde(default = "default_forget_fraction")]
    pub forget_fraction: f64,
    /// Number of forget trials; trial seeds are base_seed + 0..trials.
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Hidden-layer widths of the classifier.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub pretrain: TrainConfig,
    /// Overrides `pretrain` hyperparameters for the retrain reference.
    #[serde(default)]
    pub retrain: Option<TrainConfig>,
    /// Required by the `unlearn` command.
    #[serde(default)]
    pub unlearn: Option<UnlearnConfig>,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

fn default_forget_fraction() -> f64 {
    0.1
}
fn default_trials() -> usize {
    5
}
fn default_hidden() -> Vec<usize> {
    vec![32]
}

/// The desk-scale default task: 5 Gaussian classes in 20 dimensions,
/// 500 training samples per class, 10% forget fraction, 5 trials. The
/// cluster overlap is chosen so a two-layer MLP memorizes the training
/// rows while test accuracy stays in the low 70s — the regime where
/// membership inference has signal and unlearning is measurable.
pub fn preset_blobs_10pct() -> BlobSpec {
    BlobSpec::with_random_centers(5, 20, 500, 2.5, 2.0, 7)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let sources =
            self.preset.is_some() as u8 + self.blobs.is_some() as u8 + self.idx.is_some() as u8;
        if sources != 1 {
            return Err(Error::Config(format!(
                "exactly one task source (preset, blobs, idx) must be set, got {sources}"
            )));
        }
        if let Some(name) = &self.preset {
            if name != "blobs-10pct" {
                return Err(Error::Config(format!(
                    "unknown preset {name:?}; available: blobs-10pct"
                )));
            }
        }
        if let Some(spec) = &self.blobs {
            spec.validate()?;
        }
        if !(self.forget_fraction > 0.0 && self.forget_fraction < 1.0) {
            return Err(Error::Config(format!(
                "forget_fraction must lie in (0, 1), got {}",
                self.forget_fraction
            )));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        self.pretrain.optim.validate()?;
        if let Some(rt) = &self.retrain {
            rt.optim.validate()?;
        }
        if let Some(u) = &self.unlearn {
            u.validate()?;
        }
        Ok(())
    }

    fn retrain_config(&self) -> &TrainConfig {
        self.retrain.as_ref().unwrap_or(&self.pretrain)
    }

    /// Build the dataset (forget tags not yet assigned).
    fn resolve_task(&self) -> Result<(DatasetSplit, String)> {
        let data_seed = derive_seed(self.base_seed, "data");
        if let Some(name) = &self.preset {
            let data = gen_blobs(&preset_blobs_10pct(), data_seed)?;
            return Ok((data, format!("preset:{name}")));
        }
        if let Some(spec) = &self.blobs {
            let data = gen_blobs(spec, data_seed)?;
            return Ok((data, "blobs".to_string()));
        }
        if let Some(paths) = &self.idx {
            let data = load_idx(
                &paths.train_images,
                &paths.train_labels,
                &paths.test_images,
                &paths.test_labels,
            )?;
            return Ok((data, format!("idx:{}", paths.train_images.display())));
        }
        unreachable!("validate() guarantees one task source");
    }

    fn trial_seeds(&self) -> Vec<u64> {
        (0..self.trials as u64).map(|i| self.base_seed.wrapping_add(i)).collect()
    }
}

/// Load and schema-validate a JSON config, reporting the JSON pointer of
/// the offending field on schema violations.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::Config(format!("cannot read config {}: {e}", path.display()))
    })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        Error::Config(format!(
            "config schema violation at {}: {}",
            e.path(),
            e.inner()
        ))
    })
}

/// SHA-256 of the canonical (recursively key-sorted, compact) JSON
/// serialization. serde_json maps are ordered, so serializing a parsed
/// `Value` is canonical by construction and stable under key reordering.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let value = serde_json::to_value(config)?;
    let canonical = serde_json::to_string(&value)?;
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    Ok(hex_digest(&hasher.finalize()))
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

// ------------------------------------------------------------------
// Run manifest
// ------------------------------------------------------------------

/// Provenance record for one run directory. Written with status `running`
/// before compute starts and finalized afterwards, so an interrupted run
/// is detectable by its manifest alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub status: String,
    pub command: String,
    pub config_hash: String,
    /// The parsed config with all defaults expanded.
    pub resolved_config: Value,
    pub seeds: Vec<u64>,
    pub artifact_version: String,
    pub started_unix_ms: u64,
    pub finished_unix_ms: Option<u64>,
    pub wall_clock_secs: Option<f64>,
    /// Every file the run wrote, relative to the run directory.
    pub outputs: Vec<String>,
    pub notes: BTreeMap<String, Value>,
}

fn unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

impl RunManifest {
    fn begin(dir: &Path, command: &str, config: Value, seeds: Vec<u64>) -> Result<RunManifest> {
        let hash = config_hash(&config)?;
        let manifest = RunManifest {
            status: "running".to_string(),
            command: command.to_string(),
            config_hash: hash,
            resolved_config: config,
            seeds,
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_ms: unix_ms(),
            finished_unix_ms: None,
            wall_clock_secs: None,
            outputs: Vec::new(),
            notes: BTreeMap::new(),
        };
        manifest.write(dir)?;
        Ok(manifest)
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(dir.join("manifest.json"), text + "\n")?;
        Ok(())
    }

    fn finalize(
        mut self,
        dir: &Path,
        started: Instant,
        outputs: Vec<String>,
        notes: BTreeMap<String, Value>,
    ) -> Result<()> {
        self.status = "complete".to_string();
        self.finished_unix_ms = Some(unix_ms());
        self.wall_clock_secs = Some(started.elapsed().as_secs_f64());
        self.outputs = outputs;
        self.outputs.push("manifest.json".to_string());
        self.outputs.sort();
        self.notes = notes;
        self.write(dir)
    }

    fn fail(mut self, dir: &Path, started: Instant, error: &Error) {
        self.status = "failed".to_string();
        self.finished_unix_ms = Some(unix_ms());
        self.wall_clock_secs = Some(started.elapsed().as_secs_f64());
        self.notes.insert(
            "error".to_string(),
            json!({ "code": error.code(), "message": error.to_string() }),
        );
        // Best effort: the original error is what the caller reports.
        let _ = self.write(dir);
    }
}

// ------------------------------------------------------------------
// Output helpers
// ------------------------------------------------------------------

/// Collects files written by a run, relative to the run directory.
struct OutputSet<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl<'a> OutputSet<'a> {
    fn new(dir: &'a Path) -> OutputSet<'a> {
        OutputSet { dir, files: Vec::new() }
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        fs::write(self.dir.join(name), contents)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        self.write(name, &(text + "\n"))
    }

    fn record(&mut self, name: &str) {
        self.files.push(name.to_string());
    }

    fn into_files(self) -> Vec<String> {
        self.files
    }
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v}")
    }
}

fn trials_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("trial_seed,fa,ra,ta,mia\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.trial_seed,
            fmt_f64(r.fa),
            fmt_f64(r.ra),
            fmt_f64(r.ta),
            fmt_f64(r.mia)
        ));
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    out.push_str(&format!(
        "aggregate,{},{},{},{}\n",
        fmt_f64(mean(|r| r.fa)),
        fmt_f64(mean(|r| r.ra)),
        fmt_f64(mean(|r| r.ta)),
        fmt_f64(mean(|r| r.mia))
    ));
    out
}

/// Parse a trials.csv produced by [`trials_csv`], skipping the trailing
/// aggregate row.
fn parse_trials_csv(path: &Path) -> Result<Vec<EvalReport>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Dependency(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != "trial_seed,fa,ra,ta,mia" {
        return Err(Error::Format(format!(
            "{}: expected header trial_seed,fa,ra,ta,mia, got {header:?}",
            path.display()
        )));
    }
    let mut reports = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Format(format!(
                "{} line {}: expected 5 fields, got {}",
                path.display(),
                lineno + 2,
                fields.len()
            )));
        }
        if fields[0] == "aggregate" {
            continue;
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|e| {
                Error::Format(format!(
                    "{} line {}: bad {what} value {s:?}: {e}",
                    path.display(),
                    lineno + 2
                ))
            })
        };
        reports.push(EvalReport {
            trial_seed: fields[0].parse::<u64>().map_err(|e| {
                Error::Format(format!(
                    "{} line {}: bad trial_seed {:?}: {e}",
                    path.display(),
                    lineno + 2,
                    fields[0]
                ))
            })?,
            fa: parse(fields[1], "fa")?,
            ra: parse(fields[2], "ra")?,
            ta: parse(fields[3], "ta")?,
            mia: parse(fields[4], "mia")?,
        });
    }
    Ok(reports)
}

fn aggregate_csv(agg: &AggregateReport) -> String {
    let mut out = String::from("metric,mean,std,rt_mean,gap\n");
    for (i, name) in agg.metric_names.iter().enumerate() {
        let rt = agg.rt_means.as_ref().map(|v| fmt_f64(v[i])).unwrap_or_default();
        let gap = agg.gaps.as_ref().map(|v| fmt_f64(v[i])).unwrap_or_default();
        out.push_str(&format!(
            "{name},{},{},{rt},{gap}\n",
            fmt_f64(agg.means[i]),
            fmt_f64(agg.stds[i])
        ));
    }
    let avg_gap = agg.avg_gap.map(fmt_f64).unwrap_or_default();
    out.push_str(&format!("avg,,{},,{avg_gap}\n", fmt_f64(agg.avg_std)));
    out
}

fn diagnostics_csv(trace: &DiagnosticTrace) -> String {
    let mut out = String::from("step,phase,loss,grad_norm,cosine_fr\n");
    for s in &trace.steps {
        let phase = match s.phase {
            Phase::Forget => "forget",
            Phase::Retain => "retain",
        };
        let cosine = s.cosine_fr.map(fmt_f64).unwrap_or_default();
        out.push_str(&format!(
            "{},{phase},{},{},{cosine}\n",
            s.step,
            fmt_f64(s.loss),
            fmt_f64(s.grad_norm)
        ));
    }
    out
}

/// The aggregate.json payload: the aggregate plus labeling and protocol
/// notes, consumed by the `report` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct AggregateDocument {
    label: String,
    trial_seeds: Vec<u64>,
    report: AggregateReport,
    mia_protocol: String,
}

fn load_rt_reports(rt_dir: &Path) -> Result<Vec<EvalReport>> {
    let path = rt_dir.join("trials.csv");
    if !path.exists() {
        return Err(Error::Dependency(format!(
            "gap columns requested but {} has no trials.csv",
            rt_dir.display()
        )));
    }
    parse_trials_csv(&path)
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))
}

fn model_dims_note(data: &DatasetSplit, hidden: &[usize]) -> Value {
    let mut dims = vec![data.dim()];
    dims.extend_from_slice(hidden);
    dims.push(data.num_classes);
    json!(dims)
}

fn summary_note(summary: &TrainSummary) -> Value {
    json!({
        "train_accuracy": summary.train_accuracy,
        "test_accuracy": summary.test_accuracy,
        "final_loss": summary.final_loss,
        "steps": summary.steps,
    })
}

// ------------------------------------------------------------------
// pretrain / retrain / unlearn commands
// ------------------------------------------------------------------

fn prepare_run(args: &RunArgs, command: &str) -> Result<(ExperimentConfig, RunManifest, Instant)> {
    let mut config: ExperimentConfig = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.base_seed = seed;
    }
    config.validate()?;
    fs::create_dir_all(&args.out)?;
    let started = Instant::now();
    let manifest = RunManifest::begin(
        &args.out,
        command,
        serde_json::to_value(&config)?,
        config.trial_seeds(),
    )?;
    Ok((config, manifest, started))
}

fn cmd_pretrain(args: &RunArgs) -> Result<()> {
    let (config, manifest, started) = prepare_run(args, "pretrain")?;
    let body = || -> Result<(Vec<String>, BTreeMap<String, Value>)> {
        let (data, source) = config.resolve_task()?;
        let mut outputs = OutputSet::new(&args.out);
        let (ckpt, summary) = pretrain(
            &data,
            &config.hidden,
            config.pretrain.epochs,
            config.pretrain.batch_size,
            &config.pretrain.optim,
            config.base_seed,
        )?;
        ckpt.model.save_checkpoint(&args.out.join("pretrained.bin"))?;
        outputs.record("pretrained.bin");
        outputs.write_json(
            "dataset.json",
            &DatasetManifest::describe(&data, &source, config.base_seed, None),
        )?;
        log::info!(
            "pretrain: train accuracy {:.4}, test accuracy {:.4}",
            summary.train_accuracy,
            summary.test_accuracy
        );
        let mut notes = BTreeMap::new();
        notes.insert("train_summary".to_string(), summary_note(&summary));
        notes.insert("model_dims".to_string(), model_dims_note(&data, &config.hidden));
        notes.insert("adam_bias_correction".to_string(), json!(true));
        Ok((outputs.into_files(), notes))
    };
    match body() {
        Ok((outputs, notes)) => manifest.finalize(&args.out, started, outputs, notes),
        Err(e) => {
            manifest.fail(&args.out, started, &e);
            Err(e)
        }
    }
}

fn cmd_retrain(args: &RunArgs) -> Result<()> {
    let (config, manifest, started) = prepare_run(args, "retrain")?;
    let body = || -> Result<(Vec<String>, BTreeMap<String, Value>)> {
        let (data, source) = config.resolve_task()?;
        let train_cfg = config.retrain_config().clone();
        let seeds = config.trial_seeds();
        let pool = thread_pool(args.workers)?;
        let trials: Vec<(EvalReport, MiaAudit, TrainSummary, MlpModel)> = pool.install(|| {
            seeds
                .par_iter()
                .map(|&trial_seed| {
                    let split = split_forget(&data, config.forget_fraction, trial_seed)?;
                    let (ckpt, summary) = retrain(
                        &split,
                        &config.hidden,
                        train_cfg.epochs,
                        train_cfg.batch_size,
                        &train_cfg.optim,
                        trial_seed,
                    )?;
                    let (report, audit) = evaluate_checkpoint(
                        &ckpt.model,
                        &split,
                        config.metrics.mia_calib_size,
                        trial_seed,
                        trial_seed,
                    )?;
                    Ok((report, audit, summary, ckpt.model))
                })
                .collect::<Result<Vec<_>>>()
        })?;

        let mut outputs = OutputSet::new(&args.out);
        let reports: Vec<EvalReport> = trials.iter().map(|t| t.0).collect();
        for (i, (_, _, _, model)) in trials.iter().enumerate() {
            let name = format!("retrained_trial{i}.bin");
            model.save_checkpoint(&args.out.join(&name))?;
            outputs.record(&name);
        }
        outputs.write("trials.csv", &trials_csv(&reports))?;
        let mut notes = BTreeMap::new();
        if reports.len() >= 2 {
            let agg = aggregate(&reports, None)?;
            outputs.write("aggregate.csv", &aggregate_csv(&agg))?;
            outputs.write_json(
                "aggregate.json",
                &AggregateDocument {
                    label: "retrain".to_string(),
                    trial_seeds: seeds.clone(),
                    report: agg,
                    mia_protocol: MIA_PROTOCOL.to_string(),
                },
            )?;
        } else {
            log::info!("single trial: skipping aggregate outputs");
        }
        outputs.write_json(
            "mia_audit.json",
            &trials.iter().map(|t| &t.1).collect::<Vec<_>>(),
        )?;
        outputs.write_json(
            "dataset.json",
            &DatasetManifest::describe(&data, &source, config.base_seed, Some(config.forget_fraction)),
        )?;
        notes.insert("mia_protocol".to_string(), json!(MIA_PROTOCOL));
        notes.insert("model_dims".to_string(), model_dims_note(&data, &config.hidden));
        notes.insert(
            "train_summaries".to_string(),
            Value::Array(trials.iter().map(|t| summary_note(&t.2)).collect()),
        );
        Ok((outputs.into_files(), notes))
    };
    match body() {
        Ok((outputs, notes)) => manifest.finalize(&args.out, started, outputs, notes),
        Err(e) => {
            manifest.fail(&args.out, started, &e);
            Err(e)
        }
    }
}

fn cmd_unlearn(args: &RunArgs) -> Result<()> {
    let (config, manifest, started) = prepare_run(args, "unlearn")?;
    let body = || -> Result<(Vec<String>, BTreeMap<String, Value>)> {
        let unlearn_cfg = config.unlearn.clone().ok_or_else(|| {
            Error::Config("the unlearn command needs an \"unlearn\" config section".into())
        })?;
        let rt_reports = args.rt_dir.as_deref().map(load_rt_reports).transpose()?;
        let (data, source) = config.resolve_task()?;
        let (theta_o, pre_summary) = pretrain(
            &data,
            &config.hidden,
            config.pretrain.epochs,
            config.pretrain.batch_size,
            &config.pretrain.optim,
            config.base_seed,
        )?;
        let seeds = config.trial_seeds();
        let pool = thread_pool(args.workers)?;
        let trials: Vec<(EvalReport, MiaAudit, DiagnosticTrace, MlpModel)> = pool.install(|| {
            seeds
                .par_iter()
                .map(|&trial_seed| {
                    let split = split_forget(&data, config.forget_fraction, trial_seed)?;
                    let task = UnlearnTask {
                        pretrained: theta_o.model.clone(),
                        data: split.clone(),
                        seed: trial_seed,
                    };
                    let (ckpt, trace) = run_unlearn(&task, &unlearn_cfg)?;
                    let (report, audit) = evaluate_checkpoint(
                        &ckpt.model,
                        &split,
                        config.metrics.mia_calib_size,
                        trial_seed,
                        trial_seed,
                    )?;
                    Ok((report, audit, trace, ckpt.model))
                })
                .collect::<Result<Vec<_>>>()
        })?;

        let mut outputs = OutputSet::new(&args.out);
        theta_o.model.save_checkpoint(&args.out.join("pretrained.bin"))?;
        outputs.record("pretrained.bin");
        let reports: Vec<EvalReport> = trials.iter().map(|t| t.0).collect();
        for (i, (_, _, trace, model)) in trials.iter().enumerate() {
            let name = format!("unlearned_trial{i}.bin");
            model.save_checkpoint(&args.out.join(&name))?;
            outputs.record(&name);
            outputs.write(&format!("diagnostics_trial{i}.csv"), &diagnostics_csv(trace))?;
        }
        outputs.write("trials.csv", &trials_csv(&reports))?;
        let mut notes = BTreeMap::new();
        if reports.len() >= 2 {
            let agg = aggregate(&reports, rt_reports.as_deref())?;
            outputs.write("aggregate.csv", &aggregate_csv(&agg))?;
            outputs.write_json(
                "aggregate.json",
                &AggregateDocument {
                    label: unlearn_cfg.method.display_label().to_string(),
                    trial_seeds: seeds.clone(),
                    report: agg,
                    mia_protocol: MIA_PROTOCOL.to_string(),
                },
            )?;
        } else {
            log::info!("single trial: skipping aggregate outputs");
        }
        outputs.write_json(
            "mia_audit.json",
            &trials.iter().map(|t| &t.1).collect::<Vec<_>>(),
        )?;
        outputs.write_json(
            "dataset.json",
            &DatasetManifest::describe(&data, &source, config.base_seed, Some(config.forget_fraction)),
        )?;
        notes.insert("method".to_string(), json!(unlearn_cfg.method.display_label()));
        notes.insert("mia_protocol".to_string(), json!(MIA_PROTOCOL));
        notes.insert("rl_resampling".to_string(), json!("per-visit"));
        notes.insert("adam_bias_correction".to_string(), json!(true));
        notes.insert("pretrain_summary".to_string(), summary_note(&pre_summary));
        notes.insert("model_dims".to_string(), model_dims_note(&data, &config.hidden));
        notes.insert(
            "optimizer_sharing".to_string(),
            json!({ "share_m": unlearn_cfg.optim.share_m, "share_v": unlearn_cfg.optim.share_v }),
        );
        Ok((outputs.into_files(), notes))
    };
    match body() {
        Ok((outputs, notes)) => manifest.finalize(&args.out, started, outputs, notes),
        Err(e) => {
            manifest.fail(&args.out, started, &e);
            Err(e)
        }
    }
}

// ------------------------------------------------------------------
// variance-lab command
// ------------------------------------------------------------------

/// Random-quadratic settings for the smoothness-bound probe.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LemmaProbeConfig {
    #[serde(default = "default_lemma_objectives")]
    pub n_objectives: usize,
    #[serde(default = "default_lemma_dim")]
    pub dim: usize,
    #[serde(default = "default_lemma_coord_std")]
    pub coord_std: f64,
    #[serde(default = "default_lemma_samples")]
    pub n_samples: usize,
    #[serde(default = "default_lemma_eig_min")]
    pub eig_min: f64,
    #[serde(default = "default_lemma_eig_max")]
    pub eig_max: f64,
}

fn default_lemma_objectives() -> usize {
    10
}
fn default_lemma_dim() -> usize {
    4
}
fn default_lemma_coord_std() -> f64 {
    0.3
}
fn default_lemma_samples() -> usize {
    20_000
}
fn default_lemma_eig_min() -> f64 {
    0.1
}
fn default_lemma_eig_max() -> f64 {
    2.0
}

impl Default for LemmaProbeConfig {
    fn default() -> Self {
        LemmaProbeConfig {
            n_objectives: default_lemma_objectives(),
            dim: default_lemma_dim(),
            coord_std: default_lemma_coord_std(),
            n_samples: default_lemma_samples(),
            eig_min: default_lemma_eig_min(),
            eig_max: default_lemma_eig_max(),
        }
    }
}

/// Monte-Carlo trajectory-comparison settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateProbeConfig {
    #[serde(default = "default_sim_dim")]
    pub dim: usize,
    #[serde(default = "default_sim_steps")]
    pub t_steps: usize,
    #[serde(default = "default_sim_trials")]
    pub n_trials: usize,
    #[serde(default = "default_sim_alpha")]
    pub alpha: f64,
    #[serde(default = "default_sim_eta")]
    pub eta: f64,
    #[serde(default = "default_sim_noise")]
    pub noise: NoiseSpec,
    #[serde(default = "default_sim_eig_min")]
    pub eig_min: f64,
    #[serde(default = "default_sim_eig_max")]
    pub eig_max: f64,
    /// Objective centers are drawn uniformly from this box.
    #[serde(default = "default_sim_center_spread")]
    pub center_spread: f64,
}

fn default_sim_dim() -> usize {
    4
}
fn default_sim_steps() -> usize {
    20
}
fn default_sim_trials() -> usize {
    1000
}
fn default_sim_alpha() -> f64 {
    0.7
}
fn default_sim_eta() -> f64 {
    1.0
}
fn default_sim_noise() -> NoiseSpec {
    NoiseSpec { sigma: 1.0, temporal_corr: 0.0, cross_corr: -0.5 }
}
fn default_sim_eig_min() -> f64 {
    0.02
}
fn default_sim_eig_max() -> f64 {
    0.3
}
fn default_sim_center_spread() -> f64 {
    1.0
}

/// Configuration of the variance-lab command.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceLabConfig {
    #[serde(default = "default_vl_sigma")]
    pub sigma: f64,
    #[serde(default = "default_vl_steps")]
    pub t_steps: usize,
    /// Momentum grid; defaults to the standard sweep.
    #[serde(default)]
    pub alphas: Option<Vec<f64>>,
    #[serde(default)]
    pub taus: Option<Vec<f64>>,
    #[serde(default)]
    pub lipschitz: Option<Vec<f64>>,
    #[serde(default)]
    pub base_seed: u64,
    /// Smoothness-bound probe; set to null to skip.
    #[serde(default = "default_lemma_probe")]
    pub lemma: Option<LemmaProbeConfig>,
    /// Optional Monte-Carlo trajectory comparison.
    #[serde(default)]
    pub simulate: Option<SimulateProbeConfig>,
}

fn default_vl_sigma() -> f64 {
    1.0
}
fn default_vl_steps() -> usize {
    50
}
fn default_lemma_probe() -> Option<LemmaProbeConfig> {
    Some(LemmaProbeConfig::default())
}

fn grid_file_name(alpha: f64, tau: f64, l: f64) -> String {
    format!("bounds_alpha{alpha}_tau{tau}_L{l}.csv")
}

fn cmd_variance_lab(args: &RunArgs) -> Result<()> {
    let mut config: VarianceLabConfig = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.base_seed = seed;
    }
    fs::create_dir_all(&args.out)?;
    let started = Instant::now();
    let manifest = RunManifest::begin(
        &args.out,
        "variance-lab",
        serde_json::to_value(&config)?,
        vec![config.base_seed],
    )?;
    let body = || -> Result<(Vec<String>, BTreeMap<String, Value>)> {
        let mut outputs = OutputSet::new(&args.out);
        let mut notes = BTreeMap::new();
        let alphas = config.alphas.clone().unwrap_or_else(|| GRID_ALPHAS.to_vec());
        let taus = config.taus.clone().unwrap_or_else(|| GRID_TAUS.to_vec());
        let ls = config.lipschitz.clone().unwrap_or_else(|| GRID_LIPSCHITZ.to_vec());

        // Grid sweep: one bound table per point plus a verdict row.
        let mut verdicts = String::from("alpha,tau,lipschitz,holds,margin_f,margin_r\n");
        let mut n_points = 0usize;
        let mut all_hold = true;
        for &alpha in &alphas {
            for &tau in &taus {
                for &l in &ls {
                    let table = bound_recursion(alpha, tau, l, config.sigma, config.t_steps)?;
                    let check = verify_theorem(alpha, tau, l, config.sigma, config.t_steps)?;
                    let mut csv =
                        String::from("t,var_S_f,var_S_r,var_D_f,var_D_r,margin_f,margin_r\n");
                    for t in 0..config.t_steps {
                        csv.push_str(&format!(
                            "{t},{},{},{},{},{},{}\n",
                            fmt_f64(table.shared_f[t]),
                            fmt_f64(table.shared_r[t]),
                            fmt_f64(table.decoupled_f[t]),
                            fmt_f64(table.decoupled_r[t]),
                            fmt_f64(table.shared_f[t] - table.decoupled_f[t]),
                            fmt_f64(table.shared_r[t] - table.decoupled_r[t]),
                        ));
                    }
                    outputs.write(&grid_file_name(alpha, tau, l), &csv)?;
                    verdicts.push_str(&format!(
                        "{alpha},{tau},{l},{},{},{}\n",
                        check.holds,
                        fmt_f64(check.margin_f),
                        fmt_f64(check.margin_r)
                    ));
                    all_hold &= check.holds;
                    n_points += 1;
                }
            }
        }
        outputs.write("grid_verdicts.csv", &verdicts)?;
        let summary = format!(
            "THEOREM1: {} ({n_points} grid points)",
            if all_hold { "PASS" } else { "FAIL" }
        );
        println!("{summary}");
        notes.insert("ordering_summary".to_string(), json!(summary));

        // Smoothness-bound probe on random quadratics.
        let mut lemma_ok = true;
        if let Some(lemma_cfg) = &config.lemma {
            if !(lemma_cfg.eig_min > 0.0 && lemma_cfg.eig_max >= lemma_cfg.eig_min) {
                return Err(Error::Config(format!(
                    "lemma eigenvalue range must satisfy 0 < eig_min <= eig_max, got [{}, {}]",
                    lemma_cfg.eig_min, lemma_cfg.eig_max
                )));
            }
            let slack = 1.0 + 3.0 / (lemma_cfg.n_samples as f64).sqrt();
            let mut csv = String::from("objective,dim,lipschitz,empirical,bound,exact,ok\n");
            let mut rng =
                crate::rng::SplitMix64::new(derive_seed(config.base_seed, "lemma-probe"));
            for i in 0..lemma_cfg.n_objectives {
                let eigs: Vec<f64> = (0..lemma_cfg.dim)
                    .map(|_| rng.uniform(lemma_cfg.eig_min, lemma_cfg.eig_max))
                    .collect();
                let center: Vec<f64> =
                    (0..lemma_cfg.dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
                let obj = QuadraticObjective::from_spectrum(&eigs, &center, rng.next_u64())?;
                let mean: Vec<f64> =
                    (0..lemma_cfg.dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
                let rep = verify_lemma(
                    &obj,
                    &mean,
                    lemma_cfg.coord_std,
                    lemma_cfg.n_samples,
                    rng.next_u64(),
                )?;
                let ok = rep.empirical <= rep.bound * slack;
                lemma_ok &= ok;
                csv.push_str(&format!(
                    "{i},{},{},{},{},{},{ok}\n",
                    lemma_cfg.dim,
                    fmt_f64(obj.lipschitz()?),
                    fmt_f64(rep.empirical),
                    fmt_f64(rep.bound),
                    fmt_f64(rep.exact)
                ));
            }
            outputs.write("lemma_verdicts.csv", &csv)?;
            notes.insert("lemma_ok".to_string(), json!(lemma_ok));
        }

        // Optional Monte-Carlo comparison of the two layouts on one
        // random instance, plus the noise-correlation diagnostic.
        if let Some(sim) = &config.simulate {
            if !(sim.eig_min > 0.0 && sim.eig_max >= sim.eig_min) {
                return Err(Error::Config(format!(
                    "simulate eigenvalue range must satisfy 0 < eig_min <= eig_max, got [{}, {}]",
                    sim.eig_min, sim.eig_max
                )));
            }
            let mut rng =
                crate::rng::SplitMix64::new(derive_seed(config.base_seed, "simulate-probe"));
            let draw_obj = |rng: &mut crate::rng::SplitMix64| -> Result<QuadraticObjective> {
                let eigs: Vec<f64> =
                    (0..sim.dim).map(|_| rng.uniform(sim.eig_min, sim.eig_max)).collect();
                let center: Vec<f64> = (0..sim.dim)
                    .map(|_| rng.uniform(-sim.center_spread, sim.center_spread))
                    .collect();
                QuadraticObjective::from_spectrum(&eigs, &center, rng.next_u64())
            };
            let lf = draw_obj(&mut rng)?;
            let lr = draw_obj(&mut rng)?;
            let theta0 = vec![0.0; sim.dim];
            let traj_seed = derive_seed(config.base_seed, "simulate-trajectories");
            for (kind, file) in [
                (SchemeKind::Shared, "trajectory_shared.csv"),
                (SchemeKind::Decoupled, "trajectory_decoupled.csv"),
            ] {
                let scheme =
                    SchemeConfig { kind, alpha: sim.alpha, eta: sim.eta, t_steps: sim.t_steps };
                let stats = simulate_scheme(
                    &lf,
                    &lr,
                    &theta0,
                    &sim.noise,
                    &scheme,
                    sim.n_trials,
                    traj_seed,
                )?;
                let mut csv = String::from("t,emp_var_f,emp_var_r,n_trials\n");
                for t in 0..sim.t_steps {
                    csv.push_str(&format!(
                        "{t},{},{},{}\n",
                        fmt_f64(stats.var_f[t]),
                        fmt_f64(stats.var_r[t]),
                        stats.n_trials
                    ));
                }
                outputs.write(file, &csv)?;
            }
            let corr = measure_correlation(
                &sim.noise,
                sim.dim,
                sim.t_steps.min(8),
                sim.n_trials,
                derive_seed(config.base_seed, "correlation-probe"),
            )?;
            notes.insert("noise_correlation".to_string(), serde_json::to_value(corr)?);
        }

        notes.insert("ordering_ok".to_string(), json!(all_hold));
        if !all_hold {
            return Err(Error::Consistency(format!(
                "variance ordering failed on the grid; see {}",
                args.out.join("grid_verdicts.csv").display()
            )));
        }
        if !lemma_ok {
            return Err(Error::Consistency(format!(
                "smoothness bound violated beyond Monte-Carlo slack; see {}",
                args.out.join("lemma_verdicts.csv").display()
            )));
        }
        Ok((outputs.into_files(), notes))
    };
    match body() {
        Ok((outputs, notes)) => manifest.finalize(&args.out, started, outputs, notes),
        Err(e) => {
            manifest.fail(&args.out, started, &e);
            Err(e)
        }
    }
}

// ------------------------------------------------------------------
// report command
// ------------------------------------------------------------------

struct ReportRow {
    run: String,
    label: String,
    n_trials: usize,
    /// metric name -> (mean, std, gap)
    cells: BTreeMap<String, (f64, f64, Option<f64>)>,
    avg_gap: Option<f64>,
    avg_std: f64,
}

fn load_aggregate_doc(dir: &Path) -> Result<AggregateDocument> {
    let path = dir.join("aggregate.json");
    let text = fs::read_to_string(&path).map_err(|e| {
        Error::Dependency(format!("{} has no readable aggregate.json: {e}", dir.display()))
    })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        Error::Format(format!("{}: invalid aggregate.json at {}: {}", dir.display(), e.path(), e.inner()))
    })
}

/// Metric display order: the canonical four first, then any extras.
fn metric_order(rows: &[ReportRow]) -> Vec<String> {
    let mut order: Vec<String> = ["fa", "ra", "ta", "mia"].iter().map(|s| s.to_string()).collect();
    for row in rows {
        for name in row.cells.keys() {
            if !order.contains(name) {
                order.push(name.clone());
            }
        }
    }
    order.retain(|name| rows.iter().any(|r| r.cells.contains_key(name)));
    order
}

fn percent(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for dir in &args.runs {
        let doc = load_aggregate_doc(dir)?;
        let agg = &doc.report;
        let mut cells = BTreeMap::new();
        for (i, name) in agg.metric_names.iter().enumerate() {
            let gap = agg.gaps.as_ref().map(|g| g[i]);
            cells.insert(name.clone(), (agg.means[i], agg.stds[i], gap));
        }
        rows.push(ReportRow {
            run: dir.display().to_string(),
            label: doc.label,
            n_trials: agg.n_trials,
            cells,
            avg_gap: agg.avg_gap,
            avg_std: agg.avg_std,
        });
    }
    let counts: Vec<usize> = rows.iter().map(|r| r.n_trials).collect();
    if counts.windows(2).any(|w| w[0] != w[1]) {
        log::warn!("runs have inconsistent trial counts: {counts:?}");
        eprintln!("warning: runs have inconsistent trial counts: {counts:?}");
    }
    let metrics = metric_order(&rows);

    // CSV: flat columns in percent units, gaps included where available.
    let mut csv = String::from("run,label,n_trials");
    for m in &metrics {
        csv.push_str(&format!(",{m}_mean,{m}_std,{m}_gap"));
    }
    csv.push_str(",avg_gap,avg_std\n");
    for row in &rows {
        csv.push_str(&format!("{},{},{}", row.run, row.label, row.n_trials));
        for m in &metrics {
            match row.cells.get(m) {
                Some((mean, std, gap)) => {
                    let gap = gap.map(|g| percent(g)).unwrap_or_default();
                    csv.push_str(&format!(",{},{},{gap}", percent(*mean), percent(*std)));
                }
                None => csv.push_str(",,,"),
            }
        }
        let avg_gap = row.avg_gap.map(|g| percent(g)).unwrap_or_default();
        csv.push_str(&format!(",{avg_gap},{}\n", percent(row.avg_std)));
    }

    // Aligned text table: method x metric, "mean±std (gap)" in percent.
    let mut header: Vec<String> = vec!["method".to_string()];
    header.extend(metrics.iter().map(|m| m.to_uppercase()));
    header.push("AvgGap".to_string());
    header.push("AvgStd".to_string());
    let mut text_rows: Vec<Vec<String>> = vec![header];
    let mut missing_warned = false;
    for row in &rows {
        let mut cols = vec![row.label.clone()];
        for m in &metrics {
            match row.cells.get(m) {
                Some((mean, std, gap)) => {
                    let mut cell = format!("{}\u{b1}{}", percent(*mean), percent(*std));
                    if let Some(g) = gap {
                        cell.push_str(&format!(" ({})", percent(*g)));
                    }
                    cols.push(cell);
                }
                None => {
                    if !missing_warned {
                        log::warn!("run {} is missing metric {m}", row.run);
                        eprintln!("warning: run {} is missing metric {m}", row.run);
                        missing_warned = true;
                    }
                    cols.push("\u{2014}".to_string());
                }
            }
        }
        cols.push(row.avg_gap.map(|g| percent(g)).unwrap_or_else(|| "\u{2014}".to_string()));
        cols.push(percent(row.avg_std));
        text_rows.push(cols);
    }
    let widths: Vec<usize> = (0..text_rows[0].len())
        .map(|c| text_rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    for r in &text_rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                let pad = widths[c] - cell.chars().count();
                format!("{cell}{}", " ".repeat(pad))
            })
            .collect();
        text.push_str(line.join("  ").trim_end());
        text.push('\n');
    }
    print!("{text}");

    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("report.csv"), &csv)?;
        fs::write(out.join("report.txt"), &text)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_hash_is_stable_under_key_reordering() {
        let a: Value =
            serde_json::from_str(r#"{"trials": 5, "preset": "blobs-10pct", "base_seed": 1}"#)
                .unwrap();
        let b: Value =
            serde_json::from_str(r#"{"base_seed": 1, "preset": "blobs-10pct", "trials": 5}"#)
                .unwrap();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        let c: Value = serde_json::from_str(r#"{"base_seed": 2}"#).unwrap();
        assert_ne!(config_hash(&a).unwrap(), config_hash(&c).unwrap());
    }

    #[test]
    fn experiment_config_requires_exactly_one_source() {
        let none: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(none.validate().unwrap_err().code(), "config");
        let one: ExperimentConfig =
            serde_json::from_str(r#"{"preset": "blobs-10pct"}"#).unwrap();
        one.validate().unwrap();
        let bad: ExperimentConfig = serde_json::from_str(r#"{"preset": "nope"}"#).unwrap();
        assert_eq!(bad.validate().unwrap_err().code(), "config");
    }

    #[test]
    fn unknown_config_keys_are_schema_violations() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"preset": "blobs-10pct", "trails": 5}"#).unwrap();
        let err = load_config::<ExperimentConfig>(&path).unwrap_err();
        assert_eq!(err.code(), "config");
        assert!(err.to_string().contains("trails"), "{err}");
    }

    #[test]
    fn nested_schema_violations_carry_a_json_pointer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(
            &path,
            r#"{"preset": "blobs-10pct", "pretrain": {"optim": {"kind": "sgdd", "step_size": 0.1}}}"#,
        )
        .unwrap();
        let err = load_config::<ExperimentConfig>(&path).unwrap_err();
        assert_eq!(err.code(), "config");
        assert!(err.to_string().contains("pretrain.optim"), "{err}");
    }

    #[test]
    fn trials_csv_round_trips() {
        let reports = vec![
            EvalReport { trial_seed: 0, fa: 0.5, ra: 0.9, ta: 0.8, mia: 0.25 },
            EvalReport { trial_seed: 1, fa: 0.4, ra: 0.95, ta: 0.85, mia: 0.3 },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trials.csv");
        fs::write(&path, trials_csv(&reports)).unwrap();
        let parsed = parse_trials_csv(&path).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].trial_seed, 0);
        assert_eq!(parsed[1].mia, 0.3);
    }

    #[test]
    fn preset_task_is_deterministic() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"preset": "blobs-10pct"}"#).unwrap();
        let (a, _) = cfg.resolve_task().unwrap();
        let (b, _) = cfg.resolve_task().unwrap();
        assert_eq!(a.features.data(), b.features.data());
        assert_eq!(a.len(), 5 * 500 + 5 * 100);
        assert_eq!(a.num_classes, 5);
    }
}
