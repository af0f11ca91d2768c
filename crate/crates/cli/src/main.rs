//! `memoir`: data generation, pre-training, editing, evaluation, ablations
//! and state inspection behind one binary.
//!
//! Exit codes: 0 success, 1 runtime or I/O failure, 2 usage or
//! configuration error. A failure prints exactly one JSON line on stderr.

mod args;
mod commands;
mod config;
mod error;
mod manifest;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use commands::Ctx;
use config::{FileConfig, Overlay};
use error::CliError;

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let ctx = Ctx {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        verbose: cli.verbose,
    };
    match cli.command {
        Command::GenData(a) => commands::gen_data(a.overlay(file.gen_data), &ctx),
        Command::Pretrain(a) => commands::pretrain(a.overlay(file.pretrain), &ctx),
        Command::Edit(a) => commands::edit(a.overlay(file.edit), &ctx),
        Command::Eval(a) => commands::eval(a.overlay(file.eval), &ctx),
        Command::Ablate(a) => commands::ablate_cmd(a.overlay(file.ablate), &ctx),
        Command::Inspect(a) => commands::inspect(a),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return;
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("usage error");
            let err = CliError::Usage(first.trim_start_matches("error: ").to_string());
            eprintln!("{}", err.to_line());
            std::process::exit(err.exit_code());
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("{}", e.to_line());
        std::process::exit(e.exit_code());
    }
}
