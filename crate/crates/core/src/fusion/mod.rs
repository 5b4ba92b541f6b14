//! Surfel map, view prediction, frame-to-model tracking and fusion.

mod fuse;
mod illumination;
mod mask;
mod normals;
mod pipeline;
mod ply;
mod predict;
mod surfel;
mod track;

pub use self::fuse::{fuse, FuseStats, FusionConfig};
pub use self::illumination::IlluminationModel;
pub use self::mask::{specular_mask, MASK_DILATION};
pub use self::normals::{
    back_project_depth, compute_normals, normals_from_points, NormalMap, PointMap,
};
pub use self::pipeline::{FrameTelemetry, Pipeline, PipelineConfig};
pub use self::ply::{export_ply, parse_ply, read_ply, write_ply};
pub use self::predict::{predict_view, predict_view_with, ModelView, VisibleSurfel};
pub use self::surfel::{Surfel, SurfelMap};
pub use self::track::{
    sample_bicubic, track, track_with_mask, Associations, GeometricPair, Level, Residual,
    TrackingConfig, TrackingProblem, TrackingResult,
};
