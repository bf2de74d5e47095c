use thiserror::Error;

/// Errors produced by the link simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("length mismatch: {context} ({left} vs {right})")]
    LengthMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    #[error("synchronization failed: peak-to-sidelobe ratio {psr_db:.2} dB below {threshold_db:.2} dB")]
    SyncFailure { psr_db: f64, threshold_db: f64 },

    #[error("reconstruction singular at theta = {theta} rad: {reason}")]
    Singular { theta: f64, reason: &'static str },

    #[error("LMS diverged at sample {sample}: windowed MSE {mse:.3e} (initial {initial_mse:.3e})")]
    Diverged {
        sample: usize,
        mse: f64,
        initial_mse: f64,
    },

    #[error("stage `{stage}` failed for config {digest}: {cause}")]
    Stage {
        stage: &'static str,
        digest: String,
        cause: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
