use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::fuse::{fuse, FuseStats, FusionConfig};
use super::mask::specular_mask;
use super::predict::predict_view_with;
use super::surfel::SurfelMap;
use super::track::{track_with_mask, TrackingConfig};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::image::Frame;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineConfig {
    pub tracking: TrackingConfig,
    pub fusion: FusionConfig,
    pub stability_threshold: f64,
    pub max_surfels: usize,
    pub max_consecutive_failures: usize,
    /// Surfels below this confidence are left out of the view tracked against.
    pub tracking_min_confidence: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tracking: TrackingConfig::default(),
            fusion: FusionConfig::default(),
            stability_threshold: 2.0,
            max_surfels: 4_000_000,
            max_consecutive_failures: 3,
            tracking_min_confidence: 0.0,
        }
    }
}

/// One line of tracking telemetry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameTelemetry {
    pub frame_index: usize,
    pub converged: bool,
    pub fused: bool,
    pub final_cost: f64,
    pub iterations: usize,
    pub inlier_fraction: f64,
    pub geometric_residuals: usize,
    pub photometric_residuals: usize,
    pub masked_pixels: usize,
    pub masked_skipped: usize,
    pub surfels: usize,
    pub stable_surfels: usize,
    pub fuse: FuseStats,
    pub seconds: f64,
}

/// Tracks and fuses frames one at a time.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub intrinsics: CameraIntrinsics,
    pub map: SurfelMap,
    /// Estimated pose of every processed frame; skipped frames repeat the last estimate.
    pub trajectory: Vec<Pose>,
    pub telemetry: Vec<FrameTelemetry>,
    consecutive_failures: usize,
    last_good: Option<usize>,
}

impl Pipeline {
    pub fn new(intrinsics: CameraIntrinsics, config: PipelineConfig) -> Self {
        Self {
            map: SurfelMap::new(config.stability_threshold, config.max_surfels),
            config,
            intrinsics,
            trajectory: Vec::new(),
            telemetry: Vec::new(),
            consecutive_failures: 0,
            last_good: None,
        }
    }

    pub fn last_good_frame(&self) -> Option<usize> {
        self.last_good
    }

    pub fn converged_fraction(&self) -> f64 {
        let tracked: Vec<&FrameTelemetry> = self.telemetry.iter().skip(1).collect();
        if tracked.is_empty() {
            return 1.0;
        }
        tracked.iter().filter(|t| t.converged).count() as f64 / tracked.len() as f64
    }

    /// Processes `frame`, whose depth channel is already the one to fuse.
    /// The first frame is placed at `first_pose`; later frames are tracked
    /// from the previous estimate.
    pub fn process(&mut self, frame: &Frame, first_pose: &Pose) -> Result<&FrameTelemetry> {
        let start = Instant::now();
        let mask = specular_mask(&frame.rgb, self.config.tracking.mask_threshold);
        let masked_pixels = mask.as_slice().iter().filter(|m| **m).count();
        let mut telemetry = FrameTelemetry {
            frame_index: frame.frame_index,
            converged: true,
            fused: false,
            final_cost: 0.0,
            iterations: 0,
            inlier_fraction: 1.0,
            geometric_residuals: 0,
            photometric_residuals: 0,
            masked_pixels,
            masked_skipped: 0,
            surfels: 0,
            stable_surfels: 0,
            fuse: FuseStats::default(),
            seconds: 0.0,
        };

        let pose = match self.trajectory.last().copied() {
            None => Some(*first_pose),
            Some(prev) => {
                let view = predict_view_with(
                    &self.map,
                    &prev,
                    &self.intrinsics,
                    self.config.tracking_min_confidence,
                );
                let result = track_with_mask(&view, frame, &mask, &prev, &self.config.tracking);
                telemetry.converged = result.converged;
                telemetry.final_cost = result.final_cost;
                telemetry.iterations = result.iterations;
                telemetry.inlier_fraction = result.inlier_fraction;
                telemetry.geometric_residuals = result.geometric_residuals;
                telemetry.photometric_residuals = result.photometric_residuals;
                telemetry.masked_skipped = result.masked_skipped;
                if result.converged {
                    Some(result.pose)
                } else {
                    self.trajectory.push(prev);
                    None
                }
            }
        };

        match pose {
            Some(pose) => {
                telemetry.fuse = fuse(
                    &mut self.map,
                    frame,
                    &pose,
                    &self.intrinsics,
                    &mask,
                    &self.config.fusion,
                );
                telemetry.fused = true;
                self.trajectory.push(pose);
                self.consecutive_failures = 0;
                self.last_good = Some(frame.frame_index);
            }
            None => self.consecutive_failures += 1,
        }
        telemetry.surfels = self.map.len();
        telemetry.stable_surfels = self.map.stable().count();
        telemetry.seconds = start.elapsed().as_secs_f64();
        self.telemetry.push(telemetry);

        if self.consecutive_failures >= self.config.max_consecutive_failures {
            return Err(Error::TrackingLost {
                frame: frame.frame_index,
                failures: self.consecutive_failures,
                last_good: self.last_good,
            });
        }
        Ok(self.telemetry.last().unwrap())
    }
}
