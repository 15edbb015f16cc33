use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: argument {value} is outside the domain ({expected})")]
    Domain {
        what: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("parameter range: {0}")]
    ParameterRange(String),

    #[error("no sign change of the shooting sentinel for a in [{lo:e}, {hi:e}]")]
    BracketNotFound { lo: f64, hi: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("time step underflow: dt = {dt:e} < dt_min at t = {t:e}")]
    StepUnderflow { t: f64, dt: f64 },

    #[error("step rejected {retries} times in a row at t = {t:e} (last variation {variation:e})")]
    TooManyRejections {
        t: f64,
        retries: usize,
        variation: f64,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    /// `line` is 0 for command-line overrides.
    #[error("{}: {msg}", config_location(*.line))]
    Config { line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn config_location(line: usize) -> String {
    if line == 0 {
        "config override".into()
    } else {
        format!("config line {line}")
    }
}

impl Error {
    pub(crate) fn domain(what: &'static str, value: f64, expected: &'static str) -> Self {
        Error::Domain {
            what,
            value,
            expected,
        }
    }

    /// True for failures of a numerical procedure (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::BracketNotFound { .. }
                | Error::NonConvergence { .. }
                | Error::StepUnderflow { .. }
                | Error::TooManyRejections { .. }
                | Error::ParameterRange(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
