use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("{0}")]
    UnsupportedNoise(String),

    #[error("state became non-finite at step {step}")]
    Divergence { step: usize },

    #[error("scale coefficient vanishes at observation {index} (x = {state})")]
    SingularScale { index: usize, state: f64 },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("optimizer did not converge after {iterations} iterations (simplex diameter {diameter:e}, score norm {score_norm:e})")]
    FitNonConvergence {
        iterations: usize,
        diameter: f64,
        score_norm: f64,
    },

    #[error("bootstrap draw failed: {0}")]
    BootstrapDraw(String),

    #[error("{failed} of {total} bootstrap draws failed")]
    Distribution { failed: usize, total: usize },

    #[error("normalization matrix is singular")]
    SingularNormalization,

    #[error("block count {k} does not divide sample size {n}")]
    Divisibility { n: usize, k: usize },

    #[error("{failed} of {total} paths failed")]
    Experiment { failed: usize, total: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown model '{0}'")]
    UnknownModel(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input at {path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    /// Stable machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Parameter(_) => "parameter",
            Error::UnsupportedNoise(_) => "unsupported_noise",
            Error::Divergence { .. } => "divergence",
            Error::SingularScale { .. } => "singular_scale",
            Error::DegenerateData(_) => "degenerate_data",
            Error::FitNonConvergence { .. } => "fit_non_convergence",
            Error::BootstrapDraw(_) => "bootstrap_draw",
            Error::Distribution { .. } => "distribution",
            Error::SingularNormalization => "singular_normalization",
            Error::Divisibility { .. } => "divisibility",
            Error::Experiment { .. } => "experiment",
            Error::Config(_) => "config",
            Error::UnknownModel(_) => "unknown_model",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
