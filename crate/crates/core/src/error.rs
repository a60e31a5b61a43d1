use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("ill-conditioned matrix (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("LMS diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("training failed on antenna {antenna}: {source}")]
    Training {
        antenna: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("successive refinement diverged at iteration {iteration}: {source}")]
    Refinement {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("channel generation failed: {0}")]
    Generation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for any LMS divergence, including ones wrapped by a trainer.
    pub fn is_divergence(&self) -> bool {
        match self {
            Error::Divergence { .. } => true,
            Error::Training { source, .. } | Error::Refinement { source, .. } => {
                source.is_divergence()
            }
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
