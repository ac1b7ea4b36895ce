use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bitstream error in chunk {chunk}: {reason}")]
    Bitstream { chunk: usize, reason: String },

    #[error("checkpoint mismatch: stream was coded with {expected}, got {found}")]
    CheckpointMismatch { expected: String, found: String },

    #[error("curves do not overlap in PSNR: [{a_lo:.3}, {a_hi:.3}] vs [{b_lo:.3}, {b_hi:.3}] dB")]
    NoOverlap { a_lo: f64, a_hi: f64, b_lo: f64, b_hi: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("external dependency unavailable: {0}")]
    Unavailable(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
