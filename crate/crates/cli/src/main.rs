mod args;
mod commands;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use args::{Cli, Command};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = Cli::command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let (_, sub) = matches.subcommand().expect("a subcommand is required");
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a, sub),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a, sub),
        Command::DumpReprs(a) => commands::dump_reprs(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 3 })
        }
    }
}
