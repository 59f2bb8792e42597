use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error after {bytes_written} bytes: {source}")]
    Io {
        bytes_written: u64,
        #[source]
        source: io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported dump version {0} (expected 1)")]
    UnsupportedVersion(u32),

    /// `layer` is the 0-based layer index being decoded, `None` while still in the header.
    #[error("corrupted stream at layer {}: {detail}", layer.map_or_else(|| "header".to_string(), |l| l.to_string()))]
    Corruption { layer: Option<usize>, detail: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("estimator domain error: {0}")]
    EstimatorDomain(String),

    #[error("pairing error: {0}")]
    Pairing(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("architecture mismatch: {0}")]
    Architecture(String),

    #[error("coverage error, missing {what}: {}", missing.join(", "))]
    Coverage { what: String, missing: Vec<String> },

    #[error("invalid spec: {0}")]
    Spec(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("unknown subject: {0}")]
    Lookup(String),

    #[error("series too short: {len} samples, need at least {required}")]
    Length { len: usize, required: usize },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("fisher transform domain error: |r| = {0} >= 1")]
    TransformDomain(f64),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Means are still available when the confidence interval is not.
    #[error("confidence interval undefined for a single clip (time {:.3}, avg hr {:.3}, hr stddev {:.3})", means[0], means[1], means[2])]
    CiUndefined { means: [f64; 3] },

    #[error("selection error: {0}")]
    Selection(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("csv error: {0}")]
    Csv(String),
}

impl Error {
    pub(crate) fn io(bytes_written: u64, source: io::Error) -> Self {
        Error::Io {
            bytes_written,
            source,
        }
    }
}

impl From<io::Error> for Error {
    fn from(source: io::Error) -> Self {
        Error::Io {
            bytes_written: 0,
            source,
        }
    }
}
