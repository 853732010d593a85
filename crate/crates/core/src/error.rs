use thiserror::Error;

/// Errors raised by constructors, verifiers and file handling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("points {0} and {1} coincide within the duplicate tolerance")]
    DuplicatePoints(usize, usize),

    #[error("no separating direction found after {0} draws")]
    NoDirectionFound(usize),

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("network does not memorize the dataset (max abs error {0:e})")]
    NotAMemorizer(f64),

    #[error("loss/label mismatch: {0}")]
    LossLabelMismatch(String),

    #[error("non-finite objective encountered")]
    NonFiniteLoss,

    #[error("hyperplane placement failed: {0}")]
    PlacementError(String),

    #[error("grid too fine: {cells} cells exceed the budget of {budget}")]
    TooFine { cells: usize, budget: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
