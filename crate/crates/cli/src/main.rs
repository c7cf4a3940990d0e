//! `temi` command-line tool. Exit codes: 0 success, 1 I/O, 2 invalid input
//! or numeric failure, 3 bad arguments. Failures print one
//! `error[<category>] <message>` line on stderr.

mod cli;
mod commands;
mod run;

use clap::{CommandFactory, FromArgMatches};

use cli::{Cli, Command};
use run::{CliResult, Failure};

fn main() {
    let code = match real_main() {
        Ok(()) => 0,
        Err(failure) => {
            eprintln!("{failure}");
            failure.code()
        }
    };
    std::process::exit(code);
}

/// First line of a clap error without its `error: ` prefix.
fn clap_message(err: &clap::Error) -> String {
    let text = err.to_string();
    let first = text.lines().next().unwrap_or_default();
    first.strip_prefix("error: ").unwrap_or(first).to_string()
}

fn real_main() -> CliResult {
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(err) if !err.use_stderr() => {
            // --help and --version
            err.print()?;
            return Ok(());
        }
        Err(err) => return Err(Failure::arg(clap_message(&err))),
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| Failure::arg(clap_message(&e)))?;
    if let Some(n) = cli::thread_count(cli.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Io(format!("cannot start thread pool: {e}")))?;
    }
    let sub = matches.subcommand().map(|(_, m)| m).expect("clap requires a subcommand");
    match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Knn(a) => commands::knn(a),
        Command::Train(a) => commands::train(a, sub),
        Command::Eval(a) => commands::eval(a),
        Command::Kmeans(a) => commands::kmeans(a),
        Command::Probe(a) => commands::probe(a),
        Command::TheoremCheck(a) => commands::theorem_check(a),
        Command::BetaScan(a) => commands::beta_scan(a, sub),
    }
}
