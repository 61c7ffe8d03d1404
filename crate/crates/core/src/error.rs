use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error(
        "plan not certified: Bin(r-1; n_c, eps) = {tail:.3e} > delta = {delta:e} \
         (eps = {eps}, r = {r}, n_c = {n_c}); minimal n_c for beta = 0.5 is {min_n_c}"
    )]
    Uncertified {
        eps: f64,
        delta: f64,
        r: usize,
        n_c: usize,
        tail: f64,
        min_n_c: usize,
    },

    #[error("simulation diverged at step {step} (t = {time:.3} s)")]
    Simulation { step: usize, time: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
