/// Crate-wide error type.
///
/// The CLI maps these onto exit codes: configuration problems exit with 2,
/// environment/provider problems with 3, verification mismatches with 1.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown stencil `{0}` (expected 7pt-const, 7pt-var or 25pt-var)")]
    UnknownStencil(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no valid tile configuration: {0}")]
    NoValidConfig(String),

    #[error("power provider error: {0}")]
    Provider(String),

    /// A schedule replay read a value that was stale or not yet produced,
    /// or updated a point out of order.
    #[error("schedule hazard in tile {tile} ({kind}): t={t} y={y} z={z}")]
    Hazard {
        tile: usize,
        kind: &'static str,
        t: usize,
        y: usize,
        z: usize,
    },

    /// Results disagree with the reference sweep.
    #[error("verification failed: {0}")]
    Verification(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code the CLI reports for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Hazard { .. } | Error::Verification(_) => 1,
            Error::UnknownStencil(_) | Error::InvalidConfig(_) | Error::NoValidConfig(_) => 2,
            Error::Provider(_) | Error::Io(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
