use thiserror::Error;

use crate::specfit::LorentzianFit;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid input; `path` names the offending field (e.g. `magnet.h_c`).
    #[error("invalid {path}: {message}")]
    Validation { path: String, message: String },

    #[error("{solver} did not converge (residual {residual:.3e})")]
    Solver { solver: &'static str, residual: f64 },

    #[error("unstable equilibrium: {branch} branch has negative stiffness {stiffness:.3e}")]
    Unstable { branch: String, stiffness: f64 },

    #[error("degenerate mode: {0}")]
    DegenerateMode(String),

    #[error("transmission pole at {omega_ghz} GHz (singular response matrix)")]
    Pole { omega_ghz: f64 },

    #[error("undefined visibility: total spin decay rate is zero")]
    UndefinedVisibility,

    #[error("coupling {g_mhz} MHz never exceeds max(kappa, gamma) = {limit_mhz} MHz")]
    NeverStrong { g_mhz: f64, limit_mhz: f64 },

    #[error("no dip found (best prominence {prominence:.3e} below threshold {threshold:.3e})")]
    NoDipFound { prominence: f64, threshold: f64 },

    #[error("fit did not converge after {iterations} iterations")]
    NonConvergence {
        iterations: usize,
        best: Box<LorentzianFit>,
    },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("anticrossing not resolved: {0}")]
    CrossingNotResolved(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Prefixes the path of a validation error, leaving other variants untouched.
    pub fn under(self, prefix: &str) -> Self {
        match self {
            Error::Validation { path, message } => Error::Validation {
                path: format!("{prefix}.{path}"),
                message,
            },
            other => other,
        }
    }
}
