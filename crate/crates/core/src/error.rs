use thiserror::Error;

#[derive(Debug, Error)]
pub enum TgvError {
    #[error("continuous attribute `{0}` has zero standard deviation")]
    ConstantAttribute(String),
    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("records disagree on attribute set: {0}")]
    UnknownShape(String),
    #[error("attribute `{attribute}` has no category `{value}`")]
    UnknownCategory { attribute: String, value: String },
    #[error("non-finite value in {0}")]
    NonFiniteValue(String),
    #[error("categorical matrix entry at ({row}, {col}) is not -1 or +1")]
    InvalidEncoding { row: usize, col: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("lambda {0} is outside [0, 1]")]
    LambdaOutOfRange(f64),
    #[error("index {index} out of range for size {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("threshold {0} is negative")]
    NegativeThreshold(f64),
    #[error("invalid dimension: {0}")]
    InvalidDim(String),
    #[error("non-finite input to forward pass")]
    NonFiniteInput,
    #[error("forward cache does not match the current encoder state")]
    StaleCache,
    #[error("anchor {0} has an empty positive set")]
    EmptyPositiveSet(usize),
    #[error("row {0} has zero norm")]
    ZeroNormRow(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("reference set is empty")]
    EmptyReference,
    #[error("K = {k} outside [1, {r}]")]
    KOutOfRange { k: usize, r: usize },
    #[error("query embedding has zero norm")]
    ZeroNormQuery,
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("AUC needs both classes present")]
    SingleClass,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("training targets are empty")]
    EmptyTrain,
    #[error("design matrix is singular after regularization")]
    DegenerateDesign,
    #[error("rate {0} is outside [0, 1)")]
    InvalidRate(f64),
    #[error("bad file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TgvError>;

impl TgvError {
    /// Variant name, for diagnostics that should name the error kind.
    pub fn name(&self) -> &'static str {
        use TgvError::*;
        match self {
            ConstantAttribute(_) => "ConstantAttribute",
            InsufficientData { .. } => "InsufficientData",
            UnknownShape(_) => "UnknownShape",
            UnknownCategory { .. } => "UnknownCategory",
            NonFiniteValue(_) => "NonFiniteValue",
            InvalidEncoding { .. } => "InvalidEncoding",
            ShapeMismatch(_) => "ShapeMismatch",
            LambdaOutOfRange(_) => "LambdaOutOfRange",
            IndexOutOfRange { .. } => "IndexOutOfRange",
            NegativeThreshold(_) => "NegativeThreshold",
            InvalidDim(_) => "InvalidDim",
            NonFiniteInput => "NonFiniteInput",
            StaleCache => "StaleCache",
            EmptyPositiveSet(_) => "EmptyPositiveSet",
            ZeroNormRow(_) => "ZeroNormRow",
            InvalidConfig(_) => "InvalidConfig",
            NonFiniteLoss { .. } => "NonFiniteLoss",
            EmptyReference => "EmptyReference",
            KOutOfRange { .. } => "KOutOfRange",
            ZeroNormQuery => "ZeroNormQuery",
            UnknownAttribute(_) => "UnknownAttribute",
            SingleClass => "SingleClass",
            LengthMismatch(..) => "LengthMismatch",
            EmptyTrain => "EmptyTrain",
            DegenerateDesign => "DegenerateDesign",
            InvalidRate(_) => "InvalidRate",
            Format(_) => "Format",
            Io(_) => "Io",
            Csv(_) => "Csv",
            Json(_) => "Json",
        }
    }
}
