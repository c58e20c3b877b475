//! `iterseg`: generate phantom datasets, train and evaluate refinement
//! policies, run ablations and serve interactive sessions over HTTP.
//!
//! Exit codes: 0 success, 2 bad configuration or arguments, 3 unreadable or
//! invalid data, 4 failure while running. Failures print one JSON line on
//! stderr. Log level comes from `VERBOSITY` (e.g. `info`, `debug`).

mod commands;
mod config;
mod error;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use iterseg::neural::Checkpoint;

use commands::AblationPart;
use config::{parse_split, Overrides};
use error::{Classify, CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "iterseg",
    version,
    about = "Interactive 3D segmentation refinement with voxel agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic phantom dataset with its manifest.
    Gen {
        #[command(flatten)]
        run: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy and write its checkpoint and per-epoch log.
    Train {
        #[command(flatten)]
        run: Overrides,
        #[arg(long)]
        out: PathBuf,
        /// Dataset written by `gen`; generated in memory when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// train1, train2, test or all
        #[arg(long)]
        split: Option<String>,
    },
    /// Per-step dice of a checkpoint on a split.
    Eval {
        #[command(flatten)]
        run: Overrides,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        /// Also write `eval.json` and `run_config.json` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Action-set and interaction-mode sweeps.
    Ablate {
        #[command(flatten)]
        run: Overrides,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        only: AblationPart,
    },
    /// HTTP API for interactive sessions.
    Serve {
        #[command(flatten)]
        run: Overrides,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Model used by sessions that name none.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory of named checkpoints sessions may pick from.
        #[arg(long)]
        checkpoint_root: Option<PathBuf>,
    },
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Gen { run, out } => commands::gen(&run.resolve()?, &out),
        Command::Train { run, out, data, split } => {
            let mut cfg = run.resolve()?;
            if let Some(s) = split {
                cfg.train_split = parse_split(&s)?;
            }
            commands::train_cmd(&cfg, data.as_deref(), &out)
        }
        Command::Eval {
            run,
            checkpoint,
            data,
            split,
            out,
        } => {
            let mut cfg = run.resolve()?;
            if let Some(s) = split {
                cfg.eval_split = parse_split(&s)?;
            }
            let model = Checkpoint::load(&checkpoint).data()?;
            commands::reconcile_actions(&mut cfg, &model, run.actions.is_some())?;
            commands::eval_cmd(&cfg, &model, data.as_deref(), out.as_deref())
        }
        Command::Ablate { run, out, data, only } => {
            let cfg = run.resolve()?;
            commands::ablate(&cfg, data.as_deref(), run.actions.is_some(), only, &out)
        }
        Command::Serve {
            run,
            addr,
            checkpoint,
            checkpoint_root,
        } => commands::serve_cmd(&run.resolve()?, addr, checkpoint.as_deref(), checkpoint_root),
    }
}

fn main() -> ExitCode {
    let filters = std::env::var("VERBOSITY").unwrap_or_else(|_| "warn".into());
    env_logger::Builder::new().parse_filters(&filters).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Config(e.render().to_string().lines().next().unwrap_or("bad arguments").into());
            eprintln!("{}", err.to_json_line());
            return ExitCode::from(err.exit_code());
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log::debug!("{err:?}");
            eprintln!("{}", err.to_json_line());
            ExitCode::from(err.exit_code())
        }
    }
}
