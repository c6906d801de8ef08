use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CalibError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("point has non-positive depth {depth}")]
    NonPositiveDepth { depth: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no point of the cloud lands inside the image")]
    EmptyProjection,

    #[error("point cloud is degenerate: {0}")]
    DegenerateCloud(String),

    #[error("depth range is constant ({value})")]
    ConstantDepth { value: f64 },

    #[error("no usable masks")]
    NoMasks,

    #[error("baseline feature density of the {channel} channel is zero")]
    ZeroBaselineDensity { channel: &'static str },

    #[error("mask {mask_id}: contour degenerates to {corners} corners")]
    DegenerateContour { mask_id: usize, corners: usize },

    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("no mask pair passed the matching threshold")]
    NoMatches,

    #[error("degenerate correspondence configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("optimizer did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("need at least {needed} correspondences, got {got}")]
    InsufficientCorrespondences { needed: usize, got: usize },

    #[error("no primitive is visible to both sensors")]
    NoVisibleGeometry,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl CalibError {
    /// Variant name, used when reporting skipped scenes.
    pub fn kind(&self) -> &'static str {
        match self {
            CalibError::NonPositiveDepth { .. } => "NonPositiveDepth",
            CalibError::InvalidInput(_) => "InvalidInput",
            CalibError::EmptyProjection => "EmptyProjection",
            CalibError::DegenerateCloud(_) => "DegenerateCloud",
            CalibError::ConstantDepth { .. } => "ConstantDepth",
            CalibError::NoMasks => "NoMasks",
            CalibError::ZeroBaselineDensity { .. } => "ZeroBaselineDensity",
            CalibError::DegenerateContour { .. } => "DegenerateContour",
            CalibError::Format { .. } => "FormatError",
            CalibError::NoMatches => "NoMatches",
            CalibError::DegenerateConfiguration(_) => "DegenerateConfiguration",
            CalibError::NonConvergence { .. } => "NonConvergence",
            CalibError::InsufficientCorrespondences { .. } => "InsufficientCorrespondences",
            CalibError::NoVisibleGeometry => "NoVisibleGeometry",
            CalibError::Io { .. } => "IoError",
            CalibError::Image { .. } => "ImageError",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CalibError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        CalibError::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
