mod common;

use common::cylinder_sequence;
use endofusion::fusion::{
    fuse, predict_view_with, specular_mask, track, FusionConfig, SurfelMap, TrackingConfig,
    TrackingProblem,
};
use endofusion::geometry::Pose;
use nalgebra::{Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn single_frame_map(seq: &common::Sequence, k: usize) -> SurfelMap {
    let mut map = SurfelMap::new(2.0, 1_000_000);
    let f = &seq.frames[k];
    let mask = specular_mask(&f.rgb, TrackingConfig::default().mask_threshold);
    fuse(
        &mut map,
        f,
        &seq.poses[k],
        &seq.intr,
        &mask,
        &FusionConfig::default(),
    );
    map
}

#[test]
fn self_pair_returns_identity() {
    let seq = cylinder_sequence(1, 0.0);
    let map = single_frame_map(&seq, 0);
    let view = predict_view_with(&map, &seq.poses[0], &seq.intr, 0.0);
    let result = track(
        &view,
        &seq.frames[0],
        &seq.poses[0],
        &TrackingConfig::default(),
    );
    assert!(result.converged);
    let (angle, trans) = result.pose.distance_to(&seq.poses[0]);
    assert!(angle < 1e-6 && trans < 1e-6, "angle {angle} trans {trans}");
    assert!(result.final_cost < 1e-8, "{}", result.final_cost);
}

#[test]
fn pair_half_millimetre_apart() {
    let seq = cylinder_sequence(2, 0.0005);
    let map = single_frame_map(&seq, 0);
    let view = predict_view_with(&map, &seq.poses[0], &seq.intr, 0.0);
    let result = track(
        &view,
        &seq.frames[1],
        &seq.poses[0],
        &TrackingConfig::default(),
    );
    assert!(result.converged);
    let (angle, trans) = result.pose.distance_to(&seq.poses[1]);
    eprintln!(
        "pair error: {:.3e} deg, {:.3e} m, iters {}",
        angle.to_degrees(),
        trans,
        result.iterations
    );
    assert!(trans < 5e-5 && angle.to_degrees() < 0.05);
}

#[test]
fn basin_of_convergence_five_millimetres() {
    let seq = cylinder_sequence(2, 0.0005);
    let map = single_frame_map(&seq, 0);
    let view = predict_view_with(&map, &seq.poses[0], &seq.intr, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..4 {
        let dir = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        let offset = dir * 0.005;
        let init = Pose::exp(&Vector6::new(offset.x, offset.y, offset.z, 0.0, 0.0, 0.0))
            .compose(&seq.poses[1]);
        let result = track(&view, &seq.frames[1], &init, &TrackingConfig::default());
        let (angle, trans) = result.pose.distance_to(&seq.poses[1]);
        eprintln!(
            "basin {dir:?}: {:.3e} deg, {:.3e} m",
            angle.to_degrees(),
            trans
        );
        assert!(result.converged && trans < 1e-4);
    }
}

#[test]
fn jacobians_match_central_differences() {
    let seq = cylinder_sequence(2, 0.0005);
    let map = single_frame_map(&seq, 0);
    let view = predict_view_with(&map, &seq.poses[0], &seq.intr, 0.0);
    let mask = specular_mask(&seq.frames[1].rgb, TrackingConfig::default().mask_threshold);
    let problem = TrackingProblem::new(&view, &seq.frames[1], &mask, &TrackingConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let eps = 1e-7;
    for trial in 0..10 {
        let xi: Vector6<f64> = Vector6::from_fn(|k, _| {
            let scale = if k < 3 { 2e-4 } else { 5e-3 };
            rng.random_range(-scale..scale)
        });
        let t_rel = Pose::exp(&xi).compose(&problem.relative_pose(&seq.poses[1]));
        for level in [0, 1] {
            let assoc = problem.associate(level, &t_rel);
            assert!(assoc.geometric.len() > 1000 && assoc.photometric.len() > 1000);
            let (mut an_g, mut fd_g) = (Vec::new(), Vec::new());
            for pair in assoc.geometric.iter().step_by(97) {
                let r = problem.geometric_residual(pair, &t_rel);
                an_g.push(r.jacobian);
                fd_g.push(Vector6::from_fn(|k, _| {
                    let mut d = Vector6::zeros();
                    d[k] = eps;
                    let plus = problem
                        .geometric_residual(pair, &Pose::exp(&d).compose(&t_rel))
                        .value;
                    let minus = problem
                        .geometric_residual(pair, &Pose::exp(&-d).compose(&t_rel))
                        .value;
                    (plus - minus) / (2.0 * eps)
                }));
            }
            let (mut an_p, mut fd_p) = (Vec::new(), Vec::new());
            for &m in assoc.photometric.iter().step_by(97) {
                let r = problem.photometric_residual(level, m, &t_rel).unwrap();
                an_p.push(r.jacobian);
                fd_p.push(Vector6::from_fn(|k, _| {
                    let mut d = Vector6::zeros();
                    d[k] = eps;
                    let plus = problem
                        .photometric_residual(level, m, &Pose::exp(&d).compose(&t_rel))
                        .unwrap()
                        .value;
                    let minus = problem
                        .photometric_residual(level, m, &Pose::exp(&-d).compose(&t_rel))
                        .unwrap()
                        .value;
                    (plus - minus) / (2.0 * eps)
                }));
            }
            for (name, an, fd) in [("geometric", &an_g, &fd_g), ("photometric", &an_p, &fd_p)] {
                let diff: f64 = an
                    .iter()
                    .zip(fd.iter())
                    .map(|(a, f)| (a - f).norm_squared())
                    .sum::<f64>()
                    .sqrt();
                let norm: f64 = fd.iter().map(|f| f.norm_squared()).sum::<f64>().sqrt();
                eprintln!(
                    "trial {trial} level {level} {name}: relative {:.2e}",
                    diff / norm
                );
                assert!(diff / norm < 1e-4);
            }
        }
    }
}
