use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Positivity-constrained sampling hit its redraw cap.
    #[error("infeasible distribution: {redraws} redraws without a sample satisfying the positivity mask")]
    InfeasibleDistribution { redraws: usize },

    #[error("target ({x:.4}, {y:.4}) m is outside the arm workspace")]
    OutOfWorkspace { x: f64, y: f64 },

    #[error("simulation diverged at t = {time:.4} s")]
    SimulationDiverged { time: f64 },

    #[error("policy update diverged: {0}")]
    DivergedUpdate(String),

    #[error("validation failed for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("stage `{stage}` requires missing artifact {}", path.display())]
    StageDependency { stage: String, path: PathBuf },

    #[error("output directory {} is locked by another invocation", .0.display())]
    Locked(PathBuf),

    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Innermost error, looking through stage context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
