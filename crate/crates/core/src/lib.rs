//! Targetless LiDAR-camera extrinsic calibration.

pub mod cloud;
pub mod discriminator;
pub mod dpcm;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod kitti;
pub mod masks;
pub mod optimizer;
pub mod pipeline;
pub mod polygon;
pub mod projection;
pub mod raster;
pub mod report;
pub mod synthetic;

pub use cloud::PointCloud;
pub use error::{CalibError, Result};
pub use geometry::{ErrorMetrics, EulerAngles, Intrinsics, PointPair, Pose};
pub use pipeline::{run_calibration, CalibrationResult, PipelineConfig, SceneInput};
pub use projection::{Channel, ProjectionImage, VirtualCamera};
pub use raster::Raster;
