use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// The Bogoliubov frame violates the canonical relations beyond tolerance.
    #[error("state is not normalized: canonical deviation {deviation:.3e}")]
    NotNormalized { deviation: f64 },

    #[error("state not in generic Gaussian form (singular U, |det| = {det:.3e})")]
    SingularPairing { det: f64 },

    #[error("trajectory collapsed to singular frame")]
    CollapsedFrame,

    /// A physical quantity left its allowed range: the frame has been corrupted.
    #[error("state corruption: {0}")]
    Corruption(String),

    #[error("dt too large for jump discretization: total jump probability {total:.6} > 1")]
    JumpProbabilityOverflow { total: f64 },

    #[error("matrix exponential failed: condition estimate {condition:.3e}")]
    Conditioning { condition: f64 },

    #[error("oracle limited to {max} sites, got {sites}")]
    OracleTooLarge { sites: usize, max: usize },

    #[error("norm collapse in dense trajectory (norm {norm:.3e})")]
    NormCollapse { norm: f64 },

    #[error("Lindblad trace drift {drift:.3e}")]
    TraceDrift { drift: f64 },

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("trajectory {index} failed at step {step}: {source}")]
    Trajectory {
        index: u64,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("snapshot format error: {0}")]
    Snapshot(String),

    #[error("linear algebra: {0}")]
    Linalg(#[from] ndarray_linalg::error::LinalgError),

    #[error("IO error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
