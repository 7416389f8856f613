use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {what}: {reason}")]
    InvalidInput { what: &'static str, reason: String },

    #[error("crank angle {theta}° aTDC outside closed-valve span [{ivc}, {evo}]")]
    OutOfSpan { theta: f64, ivc: f64, evo: f64 },

    #[error("misfire: knock integral reached {reached:.4} by EVO ({evo}° aTDC) from SOI {soi}° aTDC")]
    Misfire { soi: f64, evo: f64, reached: f64 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("calibration diverged at epoch {epoch}: {reason}")]
    Divergence { epoch: usize, reason: String },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("config {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidInput {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
