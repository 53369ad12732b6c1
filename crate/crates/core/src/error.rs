use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box [{x_min}, {y_min}, {x_max}, {y_max}]: coordinates must be finite with positive area")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },

    #[error("box collapsed to zero area after clipping")]
    DegenerateBox,

    #[error("score {0} outside [0, 1]")]
    InvalidScore(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty split: floor(fraction * {n}) = 0 labeled images")]
    EmptySplit { n: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("detection and ground-truth image id sets differ: {0}")]
    MismatchedIds(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("dataset format: {0}")]
    DatasetFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// True for errors caused by bad configuration or bad input data, as
    /// opposed to runtime failures. The CLI maps these to exit code 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidBox { .. }
                | Error::InvalidScore(_)
                | Error::InvalidConfig(_)
                | Error::EmptySplit { .. }
                | Error::EmptyDataset
                | Error::MismatchedIds(_)
                | Error::DatasetFormat(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
