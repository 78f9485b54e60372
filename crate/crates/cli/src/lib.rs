//! Command-line front end: `gen`, `sample`, `boundary`, `metric`, `train`, `sweep`.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 training divergence,
//! 3 I/O failure. `TAS_THREADS` caps the worker pool.

pub mod args;
pub mod commands;
pub mod error;
pub mod pointfile;
pub mod settings;

use std::ffi::OsString;
use std::io::Write;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
pub use error::{CliError, CliResult};

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("TAS_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage(format!("TAS_THREADS must be a positive integer, got {v:?}")))?;
    // A pool that already exists (a second call in one process) is kept.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run<I, T>(args: I, out: &mut dyn Write) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            return write!(out, "{}", e.render()).map_err(|e| CliError::io(std::path::Path::new("<stdout>"), e));
        }
        Err(e) => {
            let text = e.render().to_string();
            let text = text.strip_prefix("error: ").unwrap_or(&text);
            return Err(CliError::Usage(text.trim_end().to_string()));
        }
    };
    configure_threads()?;
    match &cli.command {
        Command::Gen(a) => commands::gen(a, out),
        Command::Sample(a) => commands::sample(a, out),
        Command::Boundary(a) => commands::boundary(a, out),
        Command::Metric(a) => commands::metric(a, out),
        Command::Train(a) => commands::train(a, out),
        Command::Sweep(a) => commands::sweep(a, out),
    }
}
