use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid anchor configuration: {0}")]
    InvalidAnchorConfig(String),

    #[error("category {category} out of range (num_categories = {num_categories})")]
    CategoryOutOfRange { category: u32, num_categories: u32 },

    #[error("at pixel ({row}, {col}): {source}")]
    AtPixel {
        row: usize,
        col: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("perturbation amplitude {beta} violates 0 <= beta < s/2 = {bound}")]
    PerturbationTooLarge { beta: f64, bound: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("time {0} outside [0, 1]")]
    TimeOutOfRange(f64),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite state at solver step {step}")]
    SolverDiverged { step: usize },

    #[error("step size {h:e} fell below the minimum at t = {t}")]
    StepUnderflow { t: f64, h: f64 },

    #[error("non-finite loss at training step {step}")]
    LossDiverged { step: usize },

    #[error("non-finite gradient; optimizer step aborted")]
    NonFiniteGradient,

    #[error("timestep {t} out of range [{min}, {max}]")]
    TimestepOutOfRange { t: usize, min: usize, max: usize },

    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),

    #[error("no valid pixels")]
    NoValidPixels,

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch for {0}")]
    Checksum(String),

    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("invalid configuration: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("{0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidAnchorConfig(_)
            | Error::CategoryOutOfRange { .. }
            | Error::PerturbationTooLarge { .. }
            | Error::TimeOutOfRange(_)
            | Error::TimestepOutOfRange { .. }
            | Error::InvalidSchedule(_)
            | Error::EmptyBatch
            | Error::InsufficientSamples(_)
            | Error::InvalidArgument(_) => "invalid_argument",
            Error::AtPixel { source, .. } => source.kind(),
            Error::Shape(_) => "shape",
            Error::NonFinite(_)
            | Error::SolverDiverged { .. }
            | Error::StepUnderflow { .. }
            | Error::LossDiverged { .. }
            | Error::NonFiniteGradient => "numerical",
            Error::NoValidPixels => "no_valid_pixels",
            Error::Format(_) | Error::FormatVersion { .. } => "format",
            Error::Checksum(_) => "checksum",
            Error::Validation(_) => "validation",
            Error::Io(_) => "io",
        }
    }
}
