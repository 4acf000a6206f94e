use std::fmt;

use mfg_cip::Error;

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_RANGE: i32 = 3;

/// An error with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn config(key: &str, message: impl fmt::Display) -> Self {
        Failure { code: EXIT_CONFIG, message: format!("{key}: {message}") }
    }

    pub fn from_core(context: &str, e: &Error) -> Self {
        Failure { code: exit_code(e), message: format!("{context}: {e}") }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NumericRange(_) => EXIT_RANGE,
        Error::NonConvergence { .. }
        | Error::Instability { .. }
        | Error::StabilityRestriction { .. }
        | Error::DensityFloor { .. }
        | Error::NonFinite(_)
        | Error::Degenerate { .. } => EXIT_SOLVER,
        _ => EXIT_CONFIG,
    }
}
