mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::BadConfig;
use rgls_core::{MisfitMode, StepRule};

/// Registration-guided least-squares waveform inversion on synthetic
/// transmission experiments.
#[derive(Debug, Parser)]
#[command(name = "rgls", version, about)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Write per-iteration residual gathers and warps under `<out>/adjoint`.
    #[arg(long, global = true)]
    pub dump_adjoint: bool,
    /// -v for progress, -vv for per-iteration registration detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the true and starting models, geometry and manifest of a case
    /// (or the trace pair of a registration case).
    MakeScenario(MakeScenarioArgs),
    /// Model a survey through a scenario's true model (or `--model`).
    Forward(ForwardArgs),
    /// Register a predicted trace (or survey) onto an observed one.
    Register(RegisterArgs),
    /// Run an LS or RGLS inversion on a scenario.
    Invert(InvertArgs),
    /// Summarize the outputs of a `register` or `invert` run.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct MakeScenarioArgs {
    /// H1, L1, H2, L2, R3, reg1, reg2 or reg3.
    #[arg(long)]
    pub case: Option<String>,
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub f_center: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub pml_width: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ForwardArgs {
    #[arg(long, value_name = "DIR")]
    pub scenario: PathBuf,
    /// Velocity model file to use instead of the scenario's true model.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// Trace file (`.csv` or binary with sidecar) or survey directory.
    #[arg(long, value_name = "PATH")]
    pub obs: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub pred: PathBuf,
    /// Known warp `p(t)` as a trace, for the error report.
    #[arg(long, value_name = "FILE")]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub bands: Option<usize>,
    #[arg(long)]
    pub f_center: Option<f64>,
    /// hilbert_sum, square or abs.
    #[arg(long)]
    pub lfa: Option<String>,
    #[arg(long)]
    pub penalty: Option<f64>,
    #[arg(long)]
    pub intervals: Option<usize>,
    #[arg(long)]
    pub newton_max_iter: Option<usize>,
    /// Receiver stride when registering surveys.
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    #[arg(long, value_name = "DIR")]
    pub scenario: PathBuf,
    /// Observed survey directory (default: `<scenario>/survey`, else
    /// modeled on the fly from the true model).
    #[arg(long, value_name = "DIR")]
    pub obs: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    pub method: Option<MisfitMode>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, value_parser = parse_step_rule)]
    pub step_rule: Option<StepRule>,
    #[arg(long)]
    pub step_cap: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub switch_to_ls: bool,
    #[arg(long)]
    pub switch_patience: Option<usize>,
    #[arg(long)]
    pub switch_rel_tol: Option<f64>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub v_min: Option<f64>,
    #[arg(long)]
    pub v_max: Option<f64>,
    #[arg(long)]
    pub snapshot_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory of an earlier `register` or `invert` run.
    #[arg(value_name = "DIR")]
    pub run: PathBuf,
}

fn parse_mode(s: &str) -> Result<MisfitMode, String> {
    s.parse().map_err(|e: rgls_core::Error| e.to_string())
}

fn parse_step_rule(s: &str) -> Result<StepRule, String> {
    s.parse().map_err(|e: rgls_core::Error| e.to_string())
}

const EXIT_BAD_ARGS: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Bad arguments and invalid configuration map to 2, everything else to 3.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<BadConfig>() {
            return EXIT_BAD_ARGS;
        }
        if let Some(e) = cause.downcast_ref::<rgls_core::Error>() {
            return match e {
                rgls_core::Error::InvalidArgument(_) | rgls_core::Error::UnknownCase(_) => EXIT_BAD_ARGS,
                _ => EXIT_RUNTIME,
            };
        }
    }
    EXIT_RUNTIME
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
