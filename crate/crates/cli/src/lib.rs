//! Command-line front end of the anomaly detector: image and feature-map
//! ingestion, pipeline invocation, deterministic JSON reports, NFA map
//! dumps, overlay rendering, the white-noise self-test, and synthetic
//! fixture generation.

use clap::Parser;

pub mod args;
pub mod commands;
pub mod io;
pub mod overlay;
pub mod report;
pub mod synth;

/// A command failure carrying its process exit code: 2 for unreadable or
/// unprocessable input, 64 for bad flags.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn input(message: String) -> Failure {
        Failure { code: 2, message }
    }

    pub fn flags(message: String) -> Failure {
        Failure { code: 64, message }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.message.fmt(f)
    }
}

/// Parses the given command line and runs it, returning the process exit
/// code: 0 success, 1 failed gate (--fail-on-detect, selftest over budget),
/// 2 unreadable input, 64 flag errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match args::Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version arrive here as non-error displays
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        args::Command::Detect(a) => commands::cmd_detect(a),
        args::Command::SelftestNoise(a) => commands::cmd_selftest_noise(a),
        args::Command::Synth(a) => commands::cmd_synth(a),
    };
    match result {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error: {failure}");
            failure.code
        }
    }
}
