use std::fmt;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// A configuration violated one of its invariants.
    InvalidConfig(String),
    /// A function argument fell outside the mathematical domain.
    Domain(String),
    /// Signal power is zero, so a signal-to-noise ratio has no meaning.
    SilentSignal,
    /// No autocorrelation peak cleared the detection threshold.
    PeriodNotFound {
        best_lag: usize,
        best_score: f64,
    },
    FrameTooLong {
        len: usize,
        target: usize,
    },
    /// A fixed-point FFT stage produced a value outside the data word.
    FftOverflow {
        stage: usize,
        index: usize,
        value: i64,
    },
    /// Failure while processing a specific frame in the pipeline.
    Frame {
        frame_index: usize,
        source: Box<Error>,
    },
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    Serialize(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::SilentSignal => write!(f, "signal power is zero; SNR is undefined"),
            Error::PeriodNotFound { best_lag, best_score } => {
                write!(f, "period not found (best lag {best_lag}, normalized correlation {best_score:.3})")
            }
            Error::FrameTooLong { len, target } => {
                write!(f, "frame too long: {len} samples exceeds target length {target}")
            }
            Error::FftOverflow { stage, index, value } => {
                write!(f, "fixed-point overflow at FFT stage {stage}, element {index} (value {value})")
            }
            Error::Frame { frame_index, source } => write!(f, "frame {frame_index}: {source}"),
            Error::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Error::Serialize(msg) => write!(f, "serialization failed: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Frame { source, .. } => Some(source.as_ref()),
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialize(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serialize(e.to_string())
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
