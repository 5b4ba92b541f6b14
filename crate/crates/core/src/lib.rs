//! Desk-scale monocular endoscopy SLAM.
//!
//! The crate is organised around the data flow of the pipeline:
//!
//! * [`scene`] builds procedural colon scenes and renders RGB, exact depth and
//!   poses under a co-located inverse-square light.
//! * [`depth`] supplies the depth channel that fusion consumes: ground truth,
//!   ground truth corrupted by smooth CNN-like error, or external predictions.
//! * [`fusion`] maintains a surfel map, tracks each frame against a predicted
//!   model view and fuses it in.
//! * [`eval`] scores depth maps, trajectories and reconstructed surfaces.
//! * [`dataset`] persists sequences in the on-disk format shared with external
//!   depth predictors.

pub mod dataset;
pub mod depth;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod image;
pub mod scene;

pub use crate::dataset::{DatasetManifest, SplitLabel};
pub use crate::depth::{DepthSource, NoiseModel};
pub use crate::error::{Error, Result};
pub use crate::eval::{DepthMetrics, TrajectoryError};
pub use crate::fusion::{Surfel, SurfelMap, TrackingConfig, TrackingResult};
pub use crate::geometry::{CameraIntrinsics, Pose};
pub use crate::image::{DepthMap, Frame, Image, RgbImage};
pub use crate::scene::{AppearanceParams, ColonScene, Difficulty};
