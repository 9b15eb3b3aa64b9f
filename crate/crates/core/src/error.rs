use std::path::PathBuf;

/// Errors raised by the analysis, simulation and beamforming routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("signal has {len} samples, shorter than one frame of {frame_len}")]
    SignalTooShort { len: usize, frame_len: usize },

    #[error("invalid STFT configuration: {0}")]
    InvalidStft(String),

    #[error("window pair fails the overlap-add condition: envelope vanishes at sample {sample}")]
    NotOverlapAdd { sample: usize },

    #[error("shape mismatch for {what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid value for {what}: {reason}")]
    InvalidValue { what: &'static str, reason: String },

    #[error("point ({x:.3}, {y:.3}, {z:.3}) lies outside the room")]
    OutsideRoom { x: f64, y: f64, z: f64 },

    #[error("{0} signal has zero power")]
    SilentSignal(&'static str),

    #[error("attention row {row} sums to {sum}, expected 1")]
    NotRowStochastic { row: usize, sum: f64 },

    #[error("probability vector sums to {0}, expected 1")]
    NotNormalized(f64),

    #[error("speech-active portion too short: {frames} frames, need at least {required}")]
    TooShortForStoi { frames: usize, required: usize },

    #[error("line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("{path}: expected 16000 Hz, found {found} Hz")]
    SampleRate { path: PathBuf, found: u32 },

    #[error("{path}: {msg}")]
    BadFile { path: PathBuf, msg: String },

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(
    what: &'static str,
    expected: impl std::fmt::Debug,
    found: impl std::fmt::Debug,
) -> Error {
    Error::ShapeMismatch {
        what,
        expected: format!("{expected:?}"),
        found: format!("{found:?}"),
    }
}
