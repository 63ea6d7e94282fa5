//! `relabel-rl`: generate noisy corpora, pre-train, run confidence
//! re-labeling, evaluate checkpoints and summarize runs.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
//! Log verbosity comes from `RELABEL_RL_LOG` (env_logger syntax, default
//! `info`).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::CliConfig;

#[derive(Debug, Parser)]
#[command(
    name = "relabel-rl",
    version,
    about = "Multi-agent confidence re-labeling of distantly supervised data"
)]
struct Cli {
    /// Config file (.toml or .json) layered over the defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Seed for data generation and training (sets data.seed and train.seed).
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,

    /// Override one config value by dotted path, e.g. `--set train.epochs=5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory of the command.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the fully resolved configuration as JSON.
    Config,
    /// Generate a corpus, inject noise into its training split and write both splits.
    Gen,
    /// Pre-train extractors, TransE embeddings and agent policies.
    Pretrain {
        /// Directory written by `gen`; generated in memory when omitted.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
    /// Run iterative re-labeling and re-training.
    Train {
        /// Directory written by `gen`; generated in memory when omitted.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Directory written by `pretrain`; pre-trains in memory when omitted.
        #[arg(long, value_name = "DIR")]
        pretrained: Option<PathBuf>,
        /// Re-train on the noisy labels without agents instead.
        #[arg(long)]
        baseline: bool,
    },
    /// Evaluate the checkpoints of a run (or pre-training) directory on the test split.
    Eval {
        /// Directory written by `gen`; generated in memory when omitted.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Run directory from `train` or `pretrain`.
        #[arg(long, value_name = "DIR")]
        run: PathBuf,
    },
    /// Summarize a run directory as CSV tables (reward curves, re-label counts, telemetry)
    /// under `--out`, default `<run>/summary`.
    Report {
        #[arg(long, value_name = "DIR")]
        run: PathBuf,
    },
}

/// Failure class, mapped onto the exit code.
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = CliConfig::resolve(cli.config.as_deref(), cli.seed, &cli.overrides).map_err(Failure::Usage)?;
    let need_out = || {
        cli.out
            .clone()
            .ok_or_else(|| Failure::Usage(anyhow::anyhow!("--out DIR is required for this command")))
    };
    match cli.command {
        Command::Config => commands::print_config(&cfg)?,
        Command::Gen => commands::gen(&cfg, &need_out()?)?,
        Command::Pretrain { data } => commands::pretrain_cmd(&cfg, data.as_deref(), &need_out()?)?,
        Command::Train {
            data,
            pretrained,
            baseline,
        } => commands::train(&cfg, data.as_deref(), pretrained.as_deref(), baseline, &need_out()?)?,
        Command::Eval { data, run } => commands::eval(&cfg, data.as_deref(), &run)?,
        Command::Report { run } => commands::report(&run, cli.out.as_deref())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RELABEL_RL_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) if closed_pipe(&e) => ExitCode::SUCCESS,
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// A reader such as `head` closing stdout early is not a failure.
fn closed_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<std::io::Error>())
        .any(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}
