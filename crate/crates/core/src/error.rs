use alloc::string::String;
use alloc::vec::Vec;

/// Everything that can go wrong inside the reweighting core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid class index {label} on sample {id} (num_classes = {num_classes})")]
    InvalidClassIndex { id: u64, label: usize, num_classes: usize },
    #[error("dimension mismatch on sample {id}: expected {expected}, found {found}")]
    DimensionMismatch { id: u64, expected: usize, found: usize },
    #[error("overlapping splits: sample {id} appears more than once")]
    OverlappingSplits { id: u64 },
    #[error("split coverage mismatch: sample {id} is {problem}")]
    SplitCoverage { id: u64, problem: &'static str },
    #[error("duplicate sample id {id}")]
    DuplicateId { id: u64 },
    #[error("non-finite features on sample {id}")]
    NonFiniteFeatures { id: u64 },
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("all effective sample weights are zero")]
    ZeroEffectiveWeight,
    #[error("weight vector length {found} does not match {expected} training samples")]
    WeightLength { expected: usize, found: usize },
    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("K must be ≥ 2 (got {0})")]
    InvalidFolds(usize),
    #[error("no quality evidence: both S+ and S- are empty")]
    NoQualityEvidence,
    #[error("balancedness needs at least one high-quality sample")]
    EmptyHighQuality,
    #[error("degenerate weight mass: total S+ weight {0:e} is numerically zero")]
    DegenerateWeightMass(f64),
    #[error("invalid weight bounds at validation index {index}")]
    InvalidBounds { index: usize },
    #[error("non-finite objective at iteration {iteration}")]
    NonFiniteObjective { iteration: usize, iterate: Vec<f64> },
    #[error("unknown sample {id}")]
    UnknownSample { id: u64 },
    #[error("training sample {id} has already been added to the validation set")]
    AlreadyValidation { id: u64 },
    #[error("nothing to undo")]
    NothingToUndo,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub type Result<T> = core::result::Result<T, Error>;
