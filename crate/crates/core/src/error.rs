use std::fmt;

/// A rollout whose state norm crossed the blow-up threshold.
///
/// Carries the discounted cost accumulated before the abort. Callers treat it
/// as evidence of instability, never as a cost sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divergence {
    pub step: usize,
    pub partial_cost: f64,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "rollout diverged at step {} (partial cost {:.6e})",
            self.step, self.partial_cost
        )
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("policy is not stabilizing (closed-loop spectral radius {radius:.6})")]
    NotStabilizing { radius: f64 },

    #[error("{what} did not converge within {iterations} iterations")]
    Convergence { what: &'static str, iterations: usize },

    #[error("{0}")]
    Diverged(Divergence),

    #[error("gradient estimate diverged at minibatch element {element}: {divergence}")]
    GradientDiverged {
        element: usize,
        divergence: Divergence,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("budget error: {message} (minimum per-agent budget {minimum})")]
    Budget { message: String, minimum: u64 },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("scenario generation failed: {0}")]
    Generation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// True for errors that signal an unstable policy rather than a bad call.
    pub fn is_instability(&self) -> bool {
        matches!(
            self,
            Error::NotStabilizing { .. } | Error::Diverged(_) | Error::GradientDiverged { .. }
        )
    }
}

impl From<Divergence> for Error {
    fn from(d: Divergence) -> Self {
        Error::Diverged(d)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
