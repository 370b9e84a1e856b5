use thiserror::Error;

#[derive(Debug, Error)]
pub enum SfpError {
    #[error("invalid game: {0}")]
    InvalidGame(String),

    #[error("unknown population index {0}")]
    UnknownPopulation(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("vector is not on the probability simplex: {0}")]
    NotOnSimplex(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite state encountered at t = {t}")]
    NonFinite { t: f64 },

    #[error("CFL condition violated: courant number {courant:.4} exceeds {limit}")]
    Cfl { courant: f64, limit: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("game classification mismatch: {0}")]
    Classification(String),

    #[error("did not converge: {0}")]
    NotConverged(String),

    #[error("pure profile enumeration too large ({0} profiles, limit 2^20)")]
    EnumerationLimit(u128),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SfpError {
    /// True for failures of the numerics (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SfpError::NonFinite { .. } | SfpError::Cfl { .. } | SfpError::NotConverged(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, SfpError>;
