//! Error types shared across the crate.

use thiserror::Error;

/// Unified error type for every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum ScarError {
    /// File does not start with the expected container magic, or the header
    /// is truncated or not valid JSON.
    #[error("malformed container header: {0}")]
    MalformedHeader(String),
    /// A vector row has the wrong length, or two tables/models disagree on
    /// dimension.
    #[error("dimension mismatch at row {row}: expected {expected}, got {got}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        got: usize,
    },
    /// A vector component is NaN or infinite.
    #[error("non-finite vector component in row {row}")]
    NonFiniteValue { row: usize },
    /// Two rows share the same sample id.
    #[error("duplicate sample id {0}")]
    DuplicateId(u64),
    /// Underlying I/O failure.
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
    /// An operation that needs class labels was given an unlabeled table.
    #[error("table has no labels")]
    MissingLabels,
    /// A label value is outside [0, k) or a declared class never occurs.
    #[error("invalid label set: {0}")]
    InvalidLabels(String),
    /// A class has too few samples to split.
    #[error("class {0} has fewer than 2 samples")]
    ClassTooSmall(u32),
    /// Sampling ratio outside (0, 1].
    #[error("sampling ratio {0} outside (0, 1]")]
    RatioOutOfRange(f64),
    /// Requested more clusters than samples.
    #[error("k = {k} exceeds sample count {n}")]
    KTooLarge { k: usize, n: usize },
    /// An empty cluster could not be repaired by re-seeding.
    #[error("empty cluster could not be re-seeded after {0} attempts")]
    EmptyClusterUnrecoverable(usize),
    /// Paired tables do not share an identical id sequence.
    #[error("paired tables disagree on ids at position {0}")]
    IdMismatch(usize),
    /// A declared class is absent from the training set.
    #[error("class {0} absent from training data")]
    DegenerateClass(u32),
    /// A per-class logit group is empty.
    #[error("class {0} has no logit values")]
    EmptyClass(u32),
    /// Growth-curve fit needs at least 3 distinct scales.
    #[error("growth fit needs >= 3 distinct scale values, got {0}")]
    InsufficientPoints(usize),
    /// Every bound value is zero; the growth curve is degenerate.
    #[error("all concept-space bound values are zero")]
    AllZeroBounds,
    /// Bonferroni truncation order invalid (must be odd and in [1, k]).
    #[error("bonferroni order {k_prime} invalid for {k} terms (must be odd, 1..=k)")]
    OrderOutOfRange { k_prime: usize, k: usize },
    /// The bound equation has no root in (0, 1); should be unreachable.
    #[error("no root for the set-level bound equation")]
    NoRoot,
    /// Parallel count vectors have different lengths.
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    /// The reserve pool cannot supply the planned allocation for a class.
    #[error("reserve pool for class {class} has {available} samples, need {requested}")]
    InsufficientReserve {
        class: u32,
        available: usize,
        requested: usize,
    },
    /// Config or CLI parameter failed validation.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    /// Report JSON failed to parse or violates its own index formulas.
    #[error("invalid report: {0}")]
    InvalidReport(String),
}

impl ScarError {
    /// Process exit code for the CLI: 2 for validation failures,
    /// 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScarError::EmptyClusterUnrecoverable(_)
            | ScarError::AllZeroBounds
            | ScarError::NoRoot => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, ScarError>;
