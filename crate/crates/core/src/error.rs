use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite input to {0}")]
    NonFinite(&'static str),
    #[error("invalid quaternion: {0}")]
    InvalidQuaternion(String),
    #[error("rotation angle {angle} is at or beyond the principal-branch limit of {op}")]
    BranchCut { op: &'static str, angle: f64 },
    #[error("irrep type l={l} exceeds supported maximum {max}")]
    IrrepTooLarge { l: usize, max: usize },
    #[error("invalid irreps layout: {0}")]
    InvalidLayout(String),
    #[error("layout mismatch: expected dimension {expected}, got {got}")]
    LayoutMismatch { expected: usize, got: usize },
    #[error("expected {expected} path weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("input direction is not a unit vector (norm {0})")]
    NotUnit(f64),
    #[error("angle {0} outside [0, pi]")]
    AngleOutOfRange(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("density underflow in {0}: value below the series noise floor")]
    DensityUnderflow(&'static str),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("requested {requested} points from a cloud of {available}")]
    TooManyPoints { requested: usize, available: usize },
    #[error("score function failed: {0}")]
    ScoreFn(String),
}
