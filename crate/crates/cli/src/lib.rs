//! Command-line pipeline: dataset collection, training, evaluation,
//! enhancement, comparison and trace export.

mod commands;

use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hanger_core::persist::{self, Payload};
use hanger_core::SimConfig;

pub use commands::{compare_report, periodic_path, run, CompareInput, CompareReport};

/// Exit code of a successful command.
pub const EXIT_OK: i32 = 0;
/// Exit code for malformed command lines.
pub const EXIT_USAGE: i32 = 1;
/// Exit code for failures while running a well-formed command.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] hanger_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "hanger", version, about = "Instrumented hanger-insertion testbed")]
pub struct Cli {
    /// JSON file with simulator settings; keys not present keep their defaults.
    #[arg(long, global = true)]
    pub sim_config: Option<PathBuf>,

    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a demonstration dataset preset.
    Collect(CollectArgs),
    /// Train a diffusion policy on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on Type I rollouts.
    Eval(EvalArgs),
    /// Extend a dataset with expert rollouts targeted at student failures.
    Enhance(EnhanceArgs),
    /// Compare two evaluation outcomes.
    Compare(CompareArgs),
    /// Write the collar traces of an evaluation record.
    ExportTraces(ExportTracesArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadArg {
    Text,
    Binary,
}

impl From<PayloadArg> for Payload {
    fn from(p: PayloadArg) -> Self {
        match p {
            PayloadArg::Text => Payload::Text,
            PayloadArg::Binary => Payload::Binary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarArg {
    F32,
    F64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CollectArgs {
    /// train180, train100 or train50.
    #[arg(long)]
    pub preset: String,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Replaces the preset's base seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replaces the demonstrator's action noise.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, value_enum, default_value = "text")]
    pub payload: PayloadArg,
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Whether the policy consumes the instrumentation channels.
    #[arg(long, action = ArgAction::Set)]
    pub instrumented: bool,
    /// Final checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_final: Option<f64>,
    #[arg(long)]
    pub warmup: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub diffusion_steps: Option<usize>,
    #[arg(long, value_enum, default_value = "f32")]
    pub scalar: ScalarArg,
    /// Mean loss is logged every this many steps.
    #[arg(long, default_value_t = 500)]
    pub log_every: u64,
    /// Also write `<out>.step<N>` every this many steps.
    #[arg(long)]
    pub save_every: Option<u64>,
    /// Continue from a checkpoint instead of starting fresh.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Evaluation record path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub n: usize,
    /// Rollout seeds are `seed_base, seed_base + 1, ...`.
    #[arg(long, default_value_t = 9_000_000)]
    pub seed_base: u64,
    /// Explicit rollout seeds, comma separated; overrides `--seed-base`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Policy name stored in the record (defaults to the checkpoint file stem).
    #[arg(long)]
    pub tag: Option<String>,
    /// Trace file path (defaults to `<out>` with extension `traces.json`).
    #[arg(long)]
    pub traces: Option<PathBuf>,
    /// Also write an SVG overlay of the traces.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EnhanceArgs {
    /// Dataset to extend.
    #[arg(long)]
    pub base: PathBuf,
    /// Instrumented expert checkpoint.
    #[arg(long)]
    pub expert: PathBuf,
    /// Evaluation record of the expert checkpoint.
    #[arg(long)]
    pub expert_record: PathBuf,
    /// Evaluation record of the vision-only student.
    #[arg(long)]
    pub student_record: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    pub payload: PayloadArg,
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CompareArgs {
    /// Evaluation record file, or counts written as `s/N`.
    pub a: String,
    /// Evaluation record file, or counts written as `s/N`.
    pub b: String,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Mass of the reported credible intervals.
    #[arg(long, default_value_t = 0.95)]
    pub mass: f64,
    /// Also write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExportTracesArgs {
    #[arg(long)]
    pub record: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// SVG edge length in pixels.
    #[arg(long, default_value_t = 512)]
    pub size: u32,
}

/// Snapshot written next to every output: enough to rerun the command.
#[derive(Debug, Serialize)]
pub struct RunSnapshot<'a, A: Serialize> {
    pub format_version: u32,
    pub tool_version: &'static str,
    pub command: &'a str,
    pub sim: Option<&'a SimConfig>,
    pub args: &'a A,
    pub resolved: serde_json::Value,
}

/// `<file>.run.json` for file outputs, `<dir>/run.json` for directories.
pub fn snapshot_path(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join("run.json")
    } else {
        let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".run.json");
        out.with_file_name(name)
    }
}

pub fn write_snapshot<A: Serialize>(
    out: &Path,
    is_dir: bool,
    command: &str,
    sim: Option<&SimConfig>,
    args: &A,
    resolved: serde_json::Value,
) -> CliResult<()> {
    let snap = RunSnapshot {
        format_version: persist::FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION"),
        command,
        sim,
        args,
        resolved,
    };
    persist::save_json(&snapshot_path(out, is_dir), &snap)?;
    Ok(())
}

/// Defaults overlaid with the keys of a JSON object.
pub fn sim_config_with_overrides(overrides: Option<&serde_json::Value>) -> CliResult<SimConfig> {
    let mut base = serde_json::to_value(SimConfig::default())?;
    if let Some(o) = overrides {
        let serde_json::Value::Object(map) = o else {
            return Err(CliError::Usage("simulator config must be a JSON object".into()));
        };
        let target = base.as_object_mut().expect("struct serializes to an object");
        for (k, v) in map {
            if !target.contains_key(k) {
                return Err(CliError::Usage(format!("unknown simulator setting {k:?}")));
            }
            target.insert(k.clone(), v.clone());
        }
    }
    let cfg: SimConfig = serde_json::from_value(base)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .try_init();
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
