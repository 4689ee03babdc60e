use thiserror::Error;

/// Errors raised by the simulator and its controllers.
#[derive(Debug, Error)]
pub enum Error {
    /// A state or input became non-finite. `channel` names the block that produced it.
    #[error("numeric divergence in {channel} at t = {t} s (value {value})")]
    Divergence {
        channel: &'static str,
        t: f64,
        value: f64,
    },

    #[error("fuzzy neural network training diverged at iteration {iteration}")]
    TrainingDivergence { iteration: u64 },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParams { name: &'static str, reason: String },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("unknown scenario id `{0}`")]
    UnknownScenario(String),

    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error("malformed frame: {0}")]
    MalformedFrame(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_finite(channel: &'static str, t: f64, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Divergence { channel, t, value })
    }
}
