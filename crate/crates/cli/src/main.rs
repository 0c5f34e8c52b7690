//! `phasenet`: data generation, training, inference, peak picking,
//! separation, evaluation and ablations from the command line.
//!
//! Every successful command prints one JSON line on stdout. Exit codes:
//! 1 usage, 2 configuration, 3 I/O, 4 numeric failure.

mod commands;
mod config;

use std::fmt;
use std::process::ExitCode;

use clap::Parser;
use phasenet::ErrorKind;

use crate::commands::Cli;

/// A configuration problem detected by the CLI itself.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<phasenet::Error>() {
            return match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Io => 3,
                ErrorKind::Numeric => 4,
            };
        }
        if cause.is::<ConfigError>() {
            return 2;
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 3;
        }
    }
    2
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("PHASENET_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| ConfigError(format!("PHASENET_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| ConfigError(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = init_threads().and_then(|_| commands::run(cli));
    match result {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
