//! `dse`: simulate, replay, run, estimate and analyze.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "dse", version, about = "Dynamic state estimation protection for a microgrid load bus")]
struct Cli {
    /// key = value file supplying defaults for any long flag
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// More log output on stderr (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a fault scenario and write a measurement CSV
    Simulate(SimulateArgs),
    /// Stream a measurement CSV to stdout at its sample rate
    Replay(ReplayArgs),
    /// Read samples from stdin, run all eight estimators, write a trace
    Run(RunArgs),
    /// Fit one model to the last N rows of a measurement CSV
    Estimate(EstimateArgs),
    /// Summarise a trace: latency, commitment changes, blackout, statistics
    Analyze(AnalyzeArgs),
    /// Worker process speaking the line protocol on stdin/stdout
    #[command(hide = true)]
    Worker(WorkerArgs),
}

/// Nominal load and source values.
#[derive(Debug, Clone, Default, Args)]
pub struct SystemArgs {
    /// Load resistance per phase, ohms
    #[arg(long)]
    pub r_load: Option<f64>,
    /// Load inductance per phase, henries
    #[arg(long)]
    pub l_load: Option<f64>,
    /// Neutral grounding resistance, ohms
    #[arg(long)]
    pub r_ground: Option<f64>,
    /// Nominal frequency, hertz
    #[arg(long)]
    pub f_nom: Option<f64>,
    /// Line-line rms voltage, volts
    #[arg(long)]
    pub v_ll: Option<f64>,
}

/// Estimator window and weighting.
#[derive(Debug, Clone, Default, Args)]
pub struct EstimatorArgs {
    /// Samples per estimation window
    #[arg(long)]
    pub window: Option<usize>,
    /// Sample period, seconds
    #[arg(long)]
    pub dt: Option<f64>,
    /// Voltage measurement standard deviation, volts
    #[arg(long)]
    pub sigma_v: Option<f64>,
    /// Current measurement standard deviation, amperes
    #[arg(long)]
    pub sigma_i: Option<f64>,
    /// Gauss-Newton iteration cap
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[command(flatten)]
    pub system: SystemArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// I (A-G), II (B-C), III (three-phase) or custom
    #[arg(long)]
    pub case: Option<String>,
    /// Fault model for a custom case (name, short label or id)
    #[arg(long)]
    pub fault: Option<String>,
    /// Fault path conductance, siemens
    #[arg(long)]
    pub fault_g: Option<f64>,
    /// Fault inception time, seconds
    #[arg(long)]
    pub fault_time: Option<f64>,
    /// Scenario length, seconds
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Output sample rate, hertz
    #[arg(long)]
    pub fs: Option<f64>,
    /// Integration step, seconds
    #[arg(long)]
    pub step: Option<f64>,
    /// Voltage noise standard deviation, volts
    #[arg(long)]
    pub noise_v: Option<f64>,
    /// Current noise standard deviation, amperes
    #[arg(long)]
    pub noise_i: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// ideal or current-limited
    #[arg(long)]
    pub source: Option<String>,
    /// Peak current clamp for the limited source, amperes
    #[arg(long)]
    pub ilim: Option<f64>,
    /// Service-drop resistance per phase, ohms
    #[arg(long)]
    pub line_r: Option<f64>,
    /// Service-drop inductance per phase, henries
    #[arg(long)]
    pub line_l: Option<f64>,
    #[command(flatten)]
    pub system: SystemArgs,
    /// Output CSV path ("-" for stdout)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Measurement CSV to replay
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    /// Playback speed; 1 is real time, 0 is as fast as possible
    #[arg(long)]
    pub speed: Option<f64>,
    /// Fixed gap between rows, seconds, instead of the file's timestamps
    #[arg(long)]
    pub period: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Trace CSV output path
    #[arg(long)]
    pub trace: PathBuf,
    /// A choice is committed once it has repeated more than this many times in a row
    #[arg(long)]
    pub hysteresis: Option<usize>,
    /// Best confidence below which a sample is flagged as blackout
    #[arg(long)]
    pub min_confidence: Option<f64>,
    /// Worker hosting: thread or process
    #[arg(long)]
    pub workers: Option<String>,
    /// Score late workers 0 instead of waiting for them
    #[arg(long)]
    pub realtime: bool,
    /// Per-sample reply deadline in real-time mode, seconds
    #[arg(long)]
    pub reply_timeout: Option<f64>,
    /// Override an action, MODEL=ACTION (repeatable)
    #[arg(long = "action", value_name = "MODEL=ACTION")]
    pub actions: Vec<String>,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Model name, short label or id
    #[arg(long)]
    pub model: String,
    /// Measurement CSV
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Trace CSV written by `run`
    #[arg(long)]
    pub trace: PathBuf,
    /// Fault inception time, seconds
    #[arg(long)]
    pub fault_time: Option<f64>,
    /// Blackout confidence threshold
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Also write per-model statistics here
    #[arg(long, value_name = "PATH")]
    pub stats_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WorkerArgs {
    #[arg(long)]
    pub model: String,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.verbose);
    let file = match cli.config.as_deref().map(config::ConfigFile::load).transpose() {
        Ok(f) => f.unwrap_or_default(),
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a, &file),
        Command::Replay(a) => commands::replay(&a, &file),
        Command::Run(a) => commands::run(&a, &file),
        Command::Estimate(a) => commands::estimate(&a, &file),
        Command::Analyze(a) => commands::analyze(&a, &file),
        Command::Worker(a) => commands::worker(&a, &file),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
