mod cli;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use crate::cli::{Cli, Command, RunCmd};
use crate::commands::Task;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.global.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let g = &cli.global;
    let result = match cli.command {
        Command::Bank(cmd) => commands::bank(cmd),
        Command::Proposals(cmd) => commands::proposals(cmd, g),
        Command::Ovss(RunCmd::Run(args)) => commands::run(Task::Ovss, args, g),
        Command::Res(RunCmd::Run(args)) => commands::run(Task::Res, args, g),
        Command::Eval(args) => commands::eval(args),
        Command::Overlay(args) => commands::overlay(args, g),
        Command::Ablate { preset } => commands::ablate(preset, g),
    };
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
