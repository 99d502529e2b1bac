use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed WAV: {0}")]
    MalformedWav(String),
    #[error("unsupported WAV encoding: format code {format}, {bits} bits")]
    UnsupportedEncoding { format: u16, bits: u16 },
    #[error("audio contains no frames")]
    EmptyAudio,
    #[error("sample rate {got} Hz does not match the configured {expected} Hz")]
    RateMismatch { expected: u32, got: u32 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("clip of {duration_s} s is shorter than the {window_s} s window")]
    ClipTooShort { duration_s: f64, window_s: f64 },
    #[error("invalid mel band: fmin {fmin} Hz, fmax {fmax} Hz")]
    InvalidBand { fmin: f64, fmax: f64 },

    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("no adapter instantiated for {0} input frames")]
    NoAdapterForT(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("augmentation pool is empty: {0}")]
    PoolEmpty(&'static str),
    #[error("embedding {index} has norm {norm}, expected 1")]
    NonUnitInput { index: usize, norm: f64 },
    #[error("training diverged at step {step}")]
    DivergenceDetected { step: usize },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("fingerprint database is empty")]
    EmptyDb,
    #[error("corrupt fingerprint database: {0}")]
    CorruptDb(String),
    #[error(
        "database segment length {db_w} s does not match pipeline segment length {pipeline_w} s"
    )]
    IncompatibleW { db_w: f64, pipeline_w: f64 },
    #[error("requested range [{start_s}, {end_s}) s lies outside a {duration_s} s clip")]
    OutOfRange {
        start_s: f64,
        end_s: f64,
        duration_s: f64,
    },
    #[error("query set is empty")]
    EmptyQuerySet,

    #[error(transparent)]
    Io(#[from] io::Error),
}
