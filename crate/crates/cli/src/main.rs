//! `deblur`: blind image deblurring with unknown kernel size.
//!
//! Subcommands: `synth` (degradation cases), `run` (single observation),
//! `sweep` (hyperparameter / robustness grids), `eval` (batch metrics).
//! Exit codes: 0 success, 1 invalid configuration, 2 I/O failure,
//! 3 aborted optimization.

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use deblur_core::solver::EsProfile;
use deblur_core::DeblurError;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "deblur", version, about = "Blind image deblurring with unknown kernel size")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EsProfileArg {
    LowNoise,
    HighNoise,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON configuration bundle.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the early-stopping patience profile.
    #[arg(long, value_enum)]
    es_profile: Option<EsProfileArg>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Overrides the estimates directory.
    #[arg(long)]
    estimates: Option<PathBuf>,
    /// Overrides the groundtruth directory.
    #[arg(long)]
    groundtruth: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a blurry/noisy case directory.
    Synth(CommonArgs),
    /// Deblur one observation (PNG path or case directory).
    Run(CommonArgs),
    /// Run a sweep axis over synthesized cases.
    Sweep(CommonArgs),
    /// Evaluate matched estimate/groundtruth directories.
    Eval(EvalArgs),
}

fn apply_overrides(config: &mut RunConfig, args: &CommonArgs) {
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(profile) = args.es_profile {
        config.es_profile = match profile {
            EsProfileArg::LowNoise => EsProfile::LowNoise,
            EsProfileArg::HighNoise => EsProfile::HighNoise,
        };
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
}

fn exit_code_for(err: &DeblurError) -> u8 {
    match err {
        DeblurError::Io { .. } | DeblurError::Codec { .. } => 2,
        DeblurError::RunAborted { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| -> deblur_core::Result<()> {
        match &cli.command {
            Command::Synth(args) => {
                let mut config = RunConfig::load(&args.config)?;
                apply_overrides(&mut config, args);
                commands::cmd_synth(&config)?;
            }
            Command::Run(args) => {
                let mut config = RunConfig::load(&args.config)?;
                apply_overrides(&mut config, args);
                commands::cmd_run(&config)?;
            }
            Command::Sweep(args) => {
                let mut config = RunConfig::load(&args.config)?;
                apply_overrides(&mut config, args);
                commands::cmd_sweep(&config)?;
            }
            Command::Eval(args) => {
                let mut config = RunConfig::load(&args.common.config)?;
                apply_overrides(&mut config, &args.common);
                if let Some(dir) = &args.estimates {
                    config.eval.estimates = Some(dir.clone());
                }
                if let Some(dir) = &args.groundtruth {
                    config.eval.groundtruth = Some(dir.clone());
                }
                commands::cmd_eval(&config)?;
            }
        }
        Ok(())
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
