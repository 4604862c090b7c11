use alloc::string::String;
use alloc::vec::Vec;

/// Every failure the core can report.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("axis {axis} has odd length {len}; cannot downsample by 2")]
    OddShape { axis: usize, len: usize },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("loss must be a scalar, got {len} elements")]
    NotScalarLoss { len: usize },
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("spatial axis {axis} of length {len} is not divisible by {divisor}")]
    ShapeNotDivisible { axis: usize, len: usize, divisor: usize },
    #[error("unknown block `{0}`")]
    UnknownBlock(String),
    #[error("missing parameter tensors {missing:?}; unexpected tensors {extra:?}")]
    ParamMismatch { missing: Vec<String>, extra: Vec<String> },
    #[error("t = {t} is too close to the shock time {t_shock} (t * lip = {ratio})")]
    ShockTooClose { t: f64, t_shock: f64, ratio: f64 },
    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual})")]
    FixedPointDiverged { iterations: usize, residual: f64 },
    #[error("kernel extent {0} is even; only odd kernels have a centre tap")]
    EvenKernel(usize),
    #[error("flux derivative disagrees with finite differences of the flux at u = {at} (error {error})")]
    FluxDerivative { at: f64, error: f64 },
    #[error("invalid wave speed: {0}")]
    InvalidSpeed(String),
    #[error("non-finite gradient in `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error("dataset too short: trajectory {index} has {frames} frames, need at least {need}")]
    DatasetTooShort { index: usize, frames: usize, need: usize },
    #[error("rollout horizon {horizon} exceeds the {available} frames of ground truth")]
    HorizonExceedsTruth { horizon: usize, available: usize },
    #[error("invalid parameters for family `{family}`: {detail}")]
    InvalidFamilyParams { family: &'static str, detail: String },
    #[error("horizon {horizon} reaches past 0.8 x shock time {t_shock}")]
    ShockWithinHorizon { horizon: f64, t_shock: f64 },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}
