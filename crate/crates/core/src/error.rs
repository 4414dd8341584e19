use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("disparity range over the mask is degenerate ({range:e}); a constant map carries no shape information")]
    DegenerateRange { range: f64 },

    #[error("field of view {0} rad is outside (0, pi)")]
    InvalidFov(f64),

    #[error("inverse depth is not positive at {count} pixel(s)")]
    NonPositiveDepth { count: usize },

    #[error("disparity map has no masked pixels")]
    EmptyMask,

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("{count} point(s) lie behind the camera")]
    PointBehindCamera { count: usize },

    #[error("distance threshold must be positive and finite, got {0}")]
    InvalidThreshold(f64),

    #[error("gradient is not finite")]
    NonFiniteGradient,

    #[error("all {restarts} restart(s) ended with an active positivity penalty")]
    AllRestartsInfeasible { restarts: usize },

    #[error("only {count} visible prior point(s), need at least {floor}")]
    DegenerateVisible { count: usize, floor: usize },

    #[error("synthetic scene is infeasible: {0}")]
    InfeasibleScene(String),

    #[error("malformed file at byte {offset}: {message}")]
    MalformedFile { offset: u64, message: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateRange { .. } => "DegenerateRange",
            Error::InvalidFov(_) => "InvalidFov",
            Error::NonPositiveDepth { .. } => "NonPositiveDepth",
            Error::EmptyMask => "EmptyMask",
            Error::EmptyCloud => "EmptyCloud",
            Error::PointBehindCamera { .. } => "PointBehindCamera",
            Error::InvalidThreshold(_) => "InvalidThreshold",
            Error::NonFiniteGradient => "NonFiniteGradient",
            Error::AllRestartsInfeasible { .. } => "AllRestartsInfeasible",
            Error::DegenerateVisible { .. } => "DegenerateVisible",
            Error::InfeasibleScene(_) => "InfeasibleScene",
            Error::MalformedFile { .. } => "MalformedFile",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }

    /// True for failures of the numerics rather than of the input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonPositiveDepth { .. }
                | Error::NonFiniteGradient
                | Error::AllRestartsInfeasible { .. }
                | Error::PointBehindCamera { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
