//! Endoscope trajectories that advance along the lumen centerline.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ColonScene;
use crate::error::{Error, Result};
use crate::geometry::{so3_exp, Pose};

/// Bound on the rotation between consecutive poses.
pub const MAX_FRAME_ROTATION: f64 = 2.0 * std::f64::consts::PI / 180.0;

const JITTER_ROTATION: f64 = 0.75 * std::f64::consts::PI / 180.0;
const JITTER_ROTATION_STEP: f64 = 0.25 * std::f64::consts::PI / 180.0;
/// Lateral offsets are bounded by this fraction of r0 and wander by a fifth of it per frame.
const JITTER_TRANSLATION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryParams {
    pub n_frames: usize,
    /// Arclength advanced per frame (m).
    pub advance_per_frame: f64,
    /// Arclength of the first pose (m).
    pub start: f64,
    /// `None` disables the random perturbation.
    pub jitter_seed: Option<u64>,
}

impl TrajectoryParams {
    pub fn new(n_frames: usize, advance_per_frame: f64) -> Self {
        Self {
            n_frames,
            advance_per_frame,
            start: 0.0,
            jitter_seed: None,
        }
    }

    pub fn with_jitter(mut self, seed: u64) -> Self {
        self.jitter_seed = Some(seed);
        self
    }
}

/// Camera-from-world poses looking down the lumen; the optical axis follows
/// the centerline tangent, perturbed by a bounded random walk when jitter is on.
pub fn generate_trajectory(scene: &ColonScene, params: &TrajectoryParams) -> Result<Vec<Pose>> {
    if params.n_frames == 0 {
        return Err(Error::InvalidArgument("n_frames must be at least 1".into()));
    }
    if params.advance_per_frame.is_nan() || params.advance_per_frame < 0.0 {
        return Err(Error::InvalidArgument(
            "advance_per_frame must be non-negative".into(),
        ));
    }
    let r0 = scene.r0();
    let mut rng = params.jitter_seed.map(|s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        rng.set_stream(7);
        rng
    });
    let mut offset = Vector3::<f64>::zeros();
    let mut tilt = Vector3::<f64>::zeros();
    let mut poses: Vec<Pose> = Vec::with_capacity(params.n_frames);

    for k in 0..params.n_frames {
        if let Some(rng) = rng.as_mut() {
            let lateral_step = 0.2 * JITTER_TRANSLATION * r0;
            offset.x = (offset.x + rng.random_range(-lateral_step..lateral_step)).clamp(
                -JITTER_TRANSLATION * r0 * 0.7,
                JITTER_TRANSLATION * r0 * 0.7,
            );
            offset.y = (offset.y + rng.random_range(-lateral_step..lateral_step)).clamp(
                -JITTER_TRANSLATION * r0 * 0.7,
                JITTER_TRANSLATION * r0 * 0.7,
            );
            let step = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0))
                * (JITTER_ROTATION_STEP / 3f64.sqrt());
            tilt += step;
            let norm = tilt.norm();
            if norm > JITTER_ROTATION {
                tilt *= JITTER_ROTATION / norm;
            }
        }

        let s = params.start + k as f64 * params.advance_per_frame;
        let t = scene.centerline.param_at_arclength(s);
        let f = scene.centerline.sample(t);
        let x_axis = f.e1;
        let z_axis = f.tangent;
        let y_axis = z_axis.cross(&x_axis);
        let cam_to_world = Matrix3::from_columns(&[x_axis, y_axis, z_axis]) * so3_exp(&tilt);
        let center = f.position + f.e1 * offset.x + f.e2 * offset.y;
        let rotation = cam_to_world.transpose();
        let pose = Pose::new(rotation, -(rotation * center));

        let clearance = scene.sdf(&center);
        if clearance <= 0.1 * r0 {
            return Err(Error::TrajectoryExitsLumen {
                frame: k,
                clearance,
            });
        }
        if let Some(prev) = poses.last() {
            let (angle, _) = prev.distance_to(&pose);
            if angle > MAX_FRAME_ROTATION {
                return Err(Error::InvalidArgument(format!(
                    "frame {k} turns {:.3} deg; reduce advance_per_frame",
                    angle.to_degrees()
                )));
            }
        }
        poses.push(pose);
    }
    Ok(poses)
}
