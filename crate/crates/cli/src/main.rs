//! `codiff` command-line tool: static and sequential design runs, gradient
//! diagnostics and SPCE evaluation of external design sequences.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 invalid configuration
//! or input, 3 numeric failure.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "codiff", version, about = "Contrastive-diffusion Bayesian experimental design")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimize one design and write the iteration trace.
    RunStatic(Common),
    /// Run K greedy experiments against a simulated ground truth.
    RunSequential {
        #[command(flatten)]
        common: Common,
        /// designs.csv of an earlier run to replay and verify before continuing.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Replicated gradient estimates against the analytic oracle.
    Diagnose(Common),
    /// SPCE and SNMC of an externally produced design sequence.
    EvalSpce {
        #[command(flatten)]
        common: Common,
        /// CSV with columns k, xi_1..xi_d, y_1..y_p.
        #[arg(long)]
        designs: PathBuf,
        /// Ground-truth parameter, comma separated.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        theta_star: Vec<f64>,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed and CODIFF_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Write zeros in timing columns so outputs are byte-reproducible.
    #[arg(long)]
    reproducible: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli.command.into()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("codiff: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

impl From<Command> for commands::Invocation {
    fn from(c: Command) -> Self {
        let (common, kind) = match c {
            Command::RunStatic(c) => (c, commands::Kind::Static),
            Command::RunSequential { common, resume } => (common, commands::Kind::Sequential { resume }),
            Command::Diagnose(c) => (c, commands::Kind::Diagnose),
            Command::EvalSpce { common, designs, theta_star } => (common, commands::Kind::EvalSpce { designs, theta_star }),
        };
        commands::Invocation {
            kind,
            config: common.config,
            seed: common.seed,
            threads: common.threads,
            out: common.out,
            reproducible: common.reproducible,
        }
    }
}
