#![allow(dead_code)]

use endofusion::fusion::{Pipeline, PipelineConfig};
use endofusion::scene::{build_scene, generate_trajectory, render_frame, TrajectoryParams};
use endofusion::{CameraIntrinsics, ColonScene, DepthSource, Difficulty, Frame, Pose};
use rayon::prelude::*;

pub struct Sequence {
    pub scene: ColonScene,
    pub intr: CameraIntrinsics,
    pub poses: Vec<Pose>,
    pub frames: Vec<Frame>,
}

pub fn render_sequence(scene: ColonScene, params: &TrajectoryParams) -> Sequence {
    let intr = CameraIntrinsics::default();
    let poses = generate_trajectory(&scene, params).unwrap();
    let frames = poses
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut f = render_frame(&scene, p, &intr);
            f.frame_index = i;
            f
        })
        .collect();
    Sequence {
        scene,
        intr,
        poses,
        frames,
    }
}

/// Straight default cylinder, camera on the axis, no jitter.
pub fn cylinder_sequence(n: usize, advance: f64) -> Sequence {
    render_sequence(
        build_scene(0, Difficulty::Straight),
        &TrajectoryParams::new(n, advance),
    )
}

/// Runs the full pipeline, starting from the ground-truth first pose.
pub fn run_pipeline(
    seq: &Sequence,
    source: &DepthSource,
    config: PipelineConfig,
) -> endofusion::Result<Pipeline> {
    let mut pipeline = Pipeline::new(seq.intr, config);
    for f in &seq.frames {
        let depth = source.provide(f.frame_index, &f.depth)?;
        pipeline.process(&f.with_depth(depth), &seq.poses[0])?;
    }
    Ok(pipeline)
}

/// Rotation (deg) and translation (m) error of each consecutive relative pose.
pub fn relative_errors(est: &[Pose], gt: &[Pose]) -> Vec<(f64, f64)> {
    (1..est.len())
        .map(|i| {
            let e = est[i].compose(&est[i - 1].inverse());
            let g = gt[i].compose(&gt[i - 1].inverse());
            let (angle, trans) = g.distance_to(&e);
            (angle.to_degrees(), trans)
        })
        .collect()
}
