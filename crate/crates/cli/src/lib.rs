//! Driver library behind the `volsched` binary: experiment configuration,
//! CSV emission, and the three commands (schedule export, the
//! constant-vs-adaptive batch-size experiment, and the verification suites).
//!
//! Everything here is std-side plumbing; the mathematics lives in
//! `volsched-core`. The binary in `main.rs` only parses flags, calls into
//! [`commands`], and maps failures to a nonzero exit status.

pub mod commands;
pub mod config;
pub mod csvio;

use std::fmt;

/// Driver-level failure: either a numerical/domain error from the core, an
/// IO problem, or a malformed config.
#[derive(Debug)]
pub enum CliError {
    Core(volsched_core::Error),
    Io(std::io::Error),
    Config(String),
    /// A verification suite ran to completion and found violations.
    VerificationFailed { suite: &'static str, failures: usize },
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "io error: {e}"),
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::VerificationFailed { suite, failures } => {
                write!(f, "verification suite '{suite}' failed {failures} check(s)")
            }
        }
    }
}

impl std::error::Error for CliError {}

impl From<volsched_core::Error> for CliError {
    fn from(e: volsched_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
