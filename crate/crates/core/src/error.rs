use alloc::string::String;

/// Errors raised by the algebra, network and diffusion layers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid grade {0}: expected 0..=4")]
    InvalidGrade(usize),
    #[error("invalid versor: |v rev(v) - 1| = {deviation:e}")]
    InvalidVersor { deviation: f64 },
    #[error("quaternion norm {norm} is not unit")]
    NonUnitQuaternion { norm: f64 },
    #[error("point at infinity: homogeneous weight {weight:e}")]
    PointAtInfinity { weight: f64 },
    #[error("degenerate orientation: even-part norm {norm:e}")]
    DegenerateOrientation { norm: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("backward called before forward: {0}")]
    Ordering(String),
    #[error("unknown op `{0}`")]
    UnknownOp(String),
    #[error("denoising step {k} out of range 0..={k_max}")]
    StepOutOfRange { k: usize, k_max: usize },
    #[error("alpha_bar {alpha_bar:e} too small to invert")]
    DivisionGuard { alpha_bar: f64 },
    #[error("eta {0} outside [0, 1]")]
    InvalidEta(f64),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("empty batch")]
    EmptyBatch,
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Shape(alloc::format!($($arg)*))
    };
}
pub(crate) use shape_err;
