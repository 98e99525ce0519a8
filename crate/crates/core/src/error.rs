use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed dump header: {0}")]
    MalformedHeader(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value at {0}")]
    NonFiniteValue(String),
    #[error("I/O failure")]
    Io(#[from] std::io::Error),
    #[error("malformed JSON")]
    Json(#[from] serde_json::Error),
    #[error("CSV failure")]
    Csv(#[from] csv::Error),
    #[error("image codec failure")]
    Image(#[from] image::ImageError),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("invalid class label {label} (num_classes = {num_classes})")]
    InvalidLabel { label: usize, num_classes: usize },

    #[error("spatial extent H*W is zero")]
    EmptySpatialExtent,

    #[error("method requires class labels")]
    MissingLabels,
    #[error("method requires classifier head weights")]
    MissingHeadWeights,
    #[error("covariance is singular even after regularisation")]
    SingularCovariance,
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("zero-norm input at row {0}")]
    ZeroNormInput(usize),
    #[error("unsupported method: {0}")]
    UnsupportedMethod(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input")]
    EmptyInput,
    #[error("target rate {0} is outside (0, 1]")]
    InvalidTarget(f64),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("all paired differences are zero")]
    AllZeroDifferences,

    #[error("subspace model has no discriminability scores")]
    MissingDiscriminability,
    #[error("subspace model has no nuisance basis selected")]
    MissingNuisance,
    #[error("k = {k} is outside [0, {dim}]")]
    KOutOfRange { k: usize, dim: usize },

    #[error("mask selects no pixels")]
    EmptyMask,
    #[error("square side {side} does not fit a {width}x{height} image")]
    SquareTooLarge {
        side: usize,
        width: usize,
        height: usize,
    },
    #[error("kernel size {0} is even")]
    EvenKernel(usize),

    #[error("invalid eigenspectrum: {0}")]
    InvalidSpectrum(String),
    #[error("axis {axis} is outside [0, {dim})")]
    AxisOutOfRange { axis: usize, dim: usize },
}
