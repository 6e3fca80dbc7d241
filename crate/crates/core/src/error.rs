use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("simulation diverged at step {step}: non-finite state")]
    SimulationDiverged { step: usize },

    #[error("numerical singularity in {context} at index {index}")]
    NumericalSingularity { context: &'static str, index: usize },

    #[error("degenerate particle ensemble at observation {obs_index}: all weights vanished")]
    DegenerateEnsemble { obs_index: usize },

    #[error("ill-conditioned system: {0}")]
    IllConditioned(String),

    #[error("EM iteration {iter}: {source}")]
    Iteration {
        iter: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::SimulationDiverged { .. }
            | Error::NumericalSingularity { .. }
            | Error::DegenerateEnsemble { .. }
            | Error::IllConditioned(_) => true,
            Error::Iteration { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
