use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tooluse_cli::{commands, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "tooluse", version, about = "Symbolic tool-use demonstrations, training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// `synthetic` or `file:<path>`.
    #[arg(long)]
    embeddings: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample scenes and build the generalization test suites.
    Gen(Common),
    /// Generate an oracle demonstration corpus.
    Demo(Common),
    /// Train a policy on a corpus.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Evaluate a trained policy.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Corpus whose test split gives teacher-forced action accuracy.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Run the teaching-session HTTP service.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Directory of UI assets served at `/`.
        #[arg(long = "static")]
        assets: Option<PathBuf>,
        /// Policy used for action suggestions.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Re-execute the traces in an NDJSON file and verify their final states.
    Replay {
        #[command(flatten)]
        common: Common,
        trace: PathBuf,
    },
}

fn config(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(e) = &common.embeddings {
        cfg.embeddings = e.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(c) => commands::gen(&config(&c)?, &c.out),
        Command::Demo(c) => commands::demo(&config(&c)?, &c.out),
        Command::Train { common, corpus } => commands::train(&config(&common)?, &common.out, corpus.as_deref()),
        Command::Eval { common, checkpoint, corpus } => commands::evaluate(&config(&common)?, &common.out, checkpoint.as_deref(), corpus.as_deref()),
        Command::Serve { common, addr, assets, checkpoint } => commands::serve(&config(&common)?, &common.out, &addr, assets, checkpoint.as_deref()),
        Command::Replay { common, trace } => commands::replay(&config(&common)?, &trace).map(|_| ()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
