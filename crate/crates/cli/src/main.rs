//! `scl`: run self-correction experiments from a single TOML config.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 backend error. Errors are
//! printed to stderr as one JSON line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use scl_core::pipeline::{self, EvaluateInputs, PipelineConfig, PipelineError};

#[derive(Debug, Parser)]
#[command(name = "scl", version, about = "Intrinsic self-correction experiments")]
struct Cli {
    /// Pipeline config (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Replace every seed in the config with this value.
    #[arg(long, global = true, value_name = "N")]
    seed_override: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the multi-turn protocol over the build split and write a trace.
    Selfcorrect,
    /// Build the preference set from a trace.
    Build {
        /// Trace file; defaults to the one in the output directory.
        #[arg(long, value_name = "PATH")]
        trace: Option<PathBuf>,
    },
    /// Train the toy policy on a preference set.
    Train {
        /// Preference set; defaults to the one in the output directory.
        #[arg(long, value_name = "PATH")]
        set: Option<PathBuf>,
    },
    /// Report accuracy, transition types, ranks, and policy accuracy.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        trace: Option<PathBuf>,
        /// Score table CSV: a `method` column, then one column per benchmark.
        #[arg(long, value_name = "PATH")]
        scores: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        policy: Option<PathBuf>,
    },
    /// Train on nested subsets over the configured grid.
    Sweep {
        #[arg(long, value_name = "PATH")]
        set: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let config_path = cli
        .config
        .ok_or_else(|| PipelineError::Usage("--config <path> is required".into()))?;
    let mut cfg = PipelineConfig::load(&config_path)?;
    cfg.apply_overrides(cli.out, cli.seed_override);
    match cli.command {
        Command::Selfcorrect => {
            let s = pipeline::cmd_selfcorrect(&cfg)?;
            println!("wrote {} ({} records)", s.trace.display(), s.records);
        }
        Command::Build { trace } => {
            let path = pipeline::cmd_build(&cfg, trace.as_deref())?;
            println!("wrote {}", path.display());
        }
        Command::Train { set } => {
            let out = pipeline::cmd_train(&cfg, set.as_deref())?;
            println!(
                "wrote {} and {} (loss {:.6} -> {:.6})",
                out.policy.display(),
                out.report.display(),
                out.report_data.initial_loss,
                out.report_data.final_loss()
            );
        }
        Command::Evaluate {
            trace,
            scores,
            policy,
        } => {
            let report = pipeline::cmd_evaluate(
                &cfg,
                &EvaluateInputs {
                    trace,
                    scores,
                    policy,
                },
            )?;
            print!("{}", report.render_text());
        }
        Command::Sweep { set } => {
            let report = pipeline::cmd_sweep(&cfg, set.as_deref())?;
            print!("{}", report.render_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
