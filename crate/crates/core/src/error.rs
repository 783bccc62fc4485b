//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by any module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An input vector had the wrong length for the operation.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A configuration value violated a module invariant.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An encoder produced the zero vector, which cannot be normalized.
    #[error("degenerate embedding: encoder output has zero norm")]
    DegenerateEmbedding,

    /// Safe and unsafe anchor means coincide; no safety direction exists.
    #[error("indistinguishable anchors: safe/unsafe mean embeddings differ by < {0:e}")]
    IndistinguishableAnchors(f64),

    /// Steering produced the zero vector (only possible at alpha = 1 with
    /// the embedding antipodal to the direction).
    #[error("degenerate steer: z + alpha*v has zero norm")]
    DegenerateSteer,

    /// The noise schedule violates 1 - alpha_bar_{t-1} - sigma_t^2 >= 0.
    #[error("invalid schedule at t={t}: 1 - alpha_bar_prev - sigma^2 = {value}")]
    InvalidSchedule { t: usize, value: f64 },

    /// A transition density was requested from a deterministic sampler step.
    #[error("degenerate density: log-probability requested with sigma_t = 0 (eta = {eta})")]
    DegenerateDensity { eta: f64 },

    /// A stored trajectory does not match the schedule it is replayed under.
    #[error("replay mismatch: {0}")]
    Replay(String),

    /// An importance ratio became non-finite during an update.
    #[error("diverged policy: non-finite importance ratio at sample {sample}, t={t}")]
    DivergedPolicy { sample: usize, t: usize },

    /// Mean approximate KL exceeded the hard abort threshold.
    #[error("KL abort: mean KL {kl} exceeded threshold {threshold} at step {step}")]
    KlAbort { kl: f64, threshold: f64, step: usize },

    /// A checkpoint file was malformed or belongs to a different run setup.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A plain-text table (anchor or task file) failed to parse.
    #[error("table parse error at line {line}: {message}")]
    Table { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
