//! Command-line front end for the r-spin correlator engine.
//!
//! The library half carries everything the thin binary dispatches to: run
//! configuration with file/flag overlay, jet sizing and the wiring that
//! drives both evaluation pipelines, and serializers for values, tables,
//! verification reports, and symbol dumps.
//!
//! Exit codes: 0 success, 1 verification failure or internal mismatch,
//! 2 argument or key parse error, 3 a request provably beyond the
//! configured caps, 4 I/O failure.

pub mod config;
pub mod engine;
pub mod render;

use std::fmt;

use rspin_core::correlators::CorrError;
use rspin_core::hierarchy::HierarchyError;
use rspin_core::scalar::ScalarError;
use rspin_core::series::SeriesError;

/// Classified command failure; each class owns one exit code.
#[derive(Debug)]
pub enum CliError {
    /// Malformed arguments, keys, or config entries (exit 2).
    Parse(String),
    /// The request needs caps beyond the configured ones (exit 3).
    Cap(String),
    /// Reading or writing a file failed (exit 4).
    Io(String),
    /// A verification or consistency failure (exit 1).
    Fail(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Fail(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Cap(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Parse(m) => write!(f, "parse error: {m}"),
            CliError::Cap(m) => write!(f, "cap exceeded: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
            CliError::Fail(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

fn series_error(e: SeriesError) -> CliError {
    match e {
        SeriesError::OutOfCap { degree, cap } => CliError::Cap(format!(
            "needs a series degree cap of at least {degree}, configured cap is {cap}"
        )),
        SeriesError::CapExceeded { needed, cap } => CliError::Cap(format!(
            "needs a series degree cap of at least {needed}, configured cap is {cap}"
        )),
        other => CliError::Fail(format!("{other}")),
    }
}

impl From<SeriesError> for CliError {
    fn from(e: SeriesError) -> Self {
        series_error(e)
    }
}

impl From<ScalarError> for CliError {
    fn from(e: ScalarError) -> Self {
        match e {
            ScalarError::TruncatedRead { exponent, valid_up_to } => CliError::Cap(format!(
                "needs the eps^{exponent} layer, computed only up to eps^{valid_up_to}; raise genus-max"
            )),
            other => CliError::Fail(format!("{other}")),
        }
    }
}

impl From<HierarchyError> for CliError {
    fn from(e: HierarchyError) -> Self {
        match e {
            HierarchyError::Series(s) => series_error(s),
            HierarchyError::Scalar(s) => s.into(),
            other => CliError::Fail(format!("{other}")),
        }
    }
}

impl From<CorrError> for CliError {
    fn from(e: CorrError) -> Self {
        match e {
            CorrError::BadKey(m) => CliError::Parse(m.into()),
            CorrError::OutOfCap => {
                CliError::Cap("key lies outside the configured insertion or depth caps".into())
            }
            CorrError::Series(s) => series_error(s),
            CorrError::Scalar(s) => s.into(),
            CorrError::Hierarchy(h) => (*h).into(),
            other => CliError::Fail(format!("{other}")),
        }
    }
}

impl From<rspin_core::zsymbol::ZError> for CliError {
    fn from(e: rspin_core::zsymbol::ZError) -> Self {
        use rspin_core::zsymbol::ZError;
        match e {
            ZError::Series(s) => series_error(s),
            ZError::DepthUnreachable { needed, valid } => CliError::Cap(format!(
                "needs symbol terms down to z^{needed}, certified only to z^{valid}"
            )),
            other => CliError::Fail(format!("{other}")),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
