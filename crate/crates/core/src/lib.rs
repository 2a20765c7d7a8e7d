//! Motion-centric single-object tracking on LiDAR point clouds.
//!
//! A tracker predicts the relative target motion between two consecutive
//! frames instead of matching appearance: segment the target points,
//! regress a rigid motion, then refine the box on the motion-compensated
//! union of both frames' target points.

pub mod augment;
pub mod config;
pub mod data;
pub mod eval;
pub mod geometry;
pub mod nn;
pub mod pipeline;
pub mod pointcloud;
pub mod rng;

pub use augment::AugmentConfig;
pub use config::{ConfigError, DatasetFormat, ExperimentConfig};
pub use data::{DataError, Split, Tracklet};
pub use eval::{EvalError, OpeReport, Tracker};
pub use geometry::{apply_rtm, center_distance, infer_rtm, iou3d, Box3D, GeometryError, Rtm, Size3};
pub use nn::{Model, ModelConfig, NnError};
pub use pipeline::{track_sequence, PipelineError, TrackerConfig};
pub use pointcloud::{Frame, PointCloudError};
