//! Command-line front end for the neurolens engine.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use args::{Cli, Command, ComposeCommand};
use error::{CliError, CliResult};

/// Runs one parsed invocation inside a thread pool of the requested size.
pub fn run(cli: Cli) -> CliResult<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads.filter(|&n| n > 0) {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Invalid(format!("cannot start thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Dissect(a) => commands::cmd_dissect(a),
        Command::Eval(a) => commands::cmd_eval(a),
        Command::Correlate(a) => commands::cmd_correlate(a),
        Command::Compose(ComposeCommand::Candidates(a)) => commands::cmd_compose_candidates(a),
        Command::Compose(ComposeCommand::Score(a)) => commands::cmd_compose_score(a),
    })
}
