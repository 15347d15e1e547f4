//! `dlsm`: descriptive statistics, training, evaluation and multi-seed reproduction runs for
//! the deep latent space model.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric or training error.

mod commands;
mod config_args;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

use commands::{CliResult, EvalArgs, Failure, GraphArgs, ReproArgs, TrainArgs};
use manifest::Manifest;

#[derive(Debug, Parser)]
#[command(name = "dlsm", version, about = "Deep latent space model for directed networks")]
struct Cli {
    /// More log output (-v info, -vv per-epoch debug)
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Descriptive statistics of a preprocessed graph, as JSON
    Stats(GraphArgs),
    /// Split, train and checkpoint into a run directory
    Train(TrainArgs),
    /// Evaluate a checkpoint: link prediction, community detection or factor distributions
    Eval(EvalArgs),
    /// Train and evaluate over seeds 1..=N and tabulate mean±sd
    Repro(ReproArgs),
    /// Replay the commands recorded in a manifest
    Rerun(RerunArgs),
}

#[derive(Debug, clap::Args)]
struct RerunArgs {
    manifest: PathBuf,
    /// Write into this directory instead of the recorded one
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn dispatch(cmd: &Cmd, argv: &[String]) -> CliResult<()> {
    match cmd {
        Cmd::Stats(a) => commands::stats(a),
        Cmd::Train(a) => commands::train_cmd(a, argv),
        Cmd::Eval(a) => commands::eval_cmd(a, argv),
        Cmd::Repro(a) => commands::repro_cmd(a, argv),
        Cmd::Rerun(a) => rerun(a),
    }
}

/// Rewrites `arg` from under `from` to under `to`.
fn relocate(arg: &str, from: &Path, to: &Path) -> String {
    match Path::new(arg).strip_prefix(from) {
        Ok(rest) if rest.as_os_str().is_empty() => to.display().to_string(),
        Ok(rest) => to.join(rest).display().to_string(),
        Err(_) => arg.to_string(),
    }
}

fn rerun(args: &RerunArgs) -> CliResult<()> {
    let manifest = Manifest::load(&args.manifest)?;
    for rec in &manifest.commands {
        let argv: Vec<String> = match &args.out {
            Some(to) => rec.argv.iter().map(|a| relocate(a, &rec.outdir, to)).collect(),
            None => rec.argv.clone(),
        };
        let cli = Cli::try_parse_from(&argv).map_err(|e| Failure::Usage(format!("recorded command does not parse: {e}")))?;
        if matches!(cli.command, Cmd::Rerun(_)) {
            continue;
        }
        dispatch(&cli.command, &argv)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_env("DLSM_LOG").init();

    match dispatch(&cli.command, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
