//! Depth, trajectory and surface accuracy metrics.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::SurfelMap;
use crate::geometry::Pose;
use crate::image::DepthMap;
use crate::scene::ColonScene;

/// Guard below which a depth value is excluded from the ratio and log metrics.
pub const DEPTH_EPSILON: f64 = 1e-6;

/// Mean absolute relative error, mean absolute log10 error and RMS error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub rel: f64,
    pub log10: f64,
    pub rms: f64,
    /// Pixels valid in both maps.
    pub compared: usize,
    /// Compared pixels dropped from `rel` or `log10` by the epsilon guard.
    pub guarded: usize,
}

/// Compares `pred` against `gt` over pixels valid (non-zero) in both.
///
/// With `normalize`, both maps are first divided by the largest valid
/// ground-truth depth, putting the metrics on a unitless [0, 1] scale.
pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap, normalize: bool) -> Result<DepthMetrics> {
    if !pred.same_size(gt) {
        return Err(Error::LengthMismatch(format!(
            "prediction is {}x{}, ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let valid = |p: f32, g: f32| p > 0.0 && g > 0.0 && p.is_finite() && g.is_finite();
    let scale = if normalize {
        let max = gt
            .as_slice()
            .iter()
            .zip(pred.as_slice())
            .filter(|(g, p)| valid(**p, **g))
            .map(|(g, _)| *g as f64)
            .fold(0.0, f64::max);
        if max > 0.0 {
            1.0 / max
        } else {
            1.0
        }
    } else {
        1.0
    };

    let (mut n, mut n_rel, mut n_log) = (0usize, 0usize, 0usize);
    let (mut sum_rel, mut sum_log, mut sum_sq) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        if !valid(p, g) {
            continue;
        }
        let p = p as f64 * scale;
        let g = g as f64 * scale;
        n += 1;
        sum_sq += (p - g) * (p - g);
        if g > DEPTH_EPSILON {
            n_rel += 1;
            sum_rel += (p - g).abs() / g;
        }
        if p > DEPTH_EPSILON && g > DEPTH_EPSILON {
            n_log += 1;
            sum_log += (p.log10() - g.log10()).abs();
        }
    }
    if n == 0 {
        return Err(Error::EmptyOverlap);
    }
    let mean = |s: f64, k: usize| if k == 0 { 0.0 } else { s / k as f64 };
    Ok(DepthMetrics {
        rel: mean(sum_rel, n_rel),
        log10: mean(sum_log, n_log),
        rms: (sum_sq / n as f64).sqrt(),
        compared: n,
        guarded: (n - n_rel) + (n - n_log),
    })
}

/// Per-frame metrics averaged over a sequence.
pub fn sequence_depth_metrics(
    preds: &[DepthMap],
    gts: &[DepthMap],
    normalize: bool,
) -> Result<DepthMetrics> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions for {} ground-truth maps",
            preds.len(),
            gts.len()
        )));
    }
    let mut acc = DepthMetrics::default();
    for (p, g) in preds.iter().zip(gts) {
        let m = depth_metrics(p, g, normalize)?;
        acc.rel += m.rel;
        acc.log10 += m.log10;
        acc.rms += m.rms;
        acc.compared += m.compared;
        acc.guarded += m.guarded;
    }
    let k = preds.len() as f64;
    acc.rel /= k;
    acc.log10 /= k;
    acc.rms /= k;
    Ok(acc)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryError {
    pub ate_rmse: f64,
    pub per_frame_errors: Vec<f64>,
}

/// Rigid transform `(R, t)` minimising `sum |R a_i + t - b_i|^2` (no scale).
pub fn align_rigid(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Pose {
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<Vector3<f64>>() / n;
    let mean_b = b.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for (pa, pb) in a.iter().zip(b) {
        cov += (pb - mean_b) * (pa - mean_a).transpose();
    }
    let svd = cov.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * v_t;
    Pose::new(r, mean_b - r * mean_a)
}

/// Absolute trajectory error over camera centres after optimal rigid alignment.
pub fn ate(est: &[Pose], gt: &[Pose]) -> Result<TrajectoryError> {
    if est.len() != gt.len() {
        return Err(Error::LengthMismatch(format!(
            "{} estimated poses for {} ground-truth poses",
            est.len(),
            gt.len()
        )));
    }
    if est.len() < 2 {
        return Err(Error::InvalidArgument(
            "ATE needs at least two poses".into(),
        ));
    }
    let a: Vec<_> = est.iter().map(Pose::camera_center).collect();
    let b: Vec<_> = gt.iter().map(Pose::camera_center).collect();
    let align = align_rigid(&a, &b);
    let per_frame_errors: Vec<f64> = a
        .iter()
        .zip(&b)
        .map(|(pa, pb)| (align.transform_point(pa) - pb).norm())
        .collect();
    let ate_rmse = (per_frame_errors.iter().map(|e| e * e).sum::<f64>()
        / per_frame_errors.len() as f64)
        .sqrt();
    Ok(TrajectoryError {
        ate_rmse,
        per_frame_errors,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceError {
    pub mean: f64,
    pub p95: f64,
    pub count: usize,
}

/// Statistics of `|sdf|` at stable surfel positions.
pub fn surface_error(map: &SurfelMap, scene: &ColonScene) -> Result<SurfaceError> {
    let mut errs: Vec<f64> = map.stable().map(|s| scene.sdf(&s.position).abs()).collect();
    if errs.is_empty() {
        return Err(Error::EmptyMap);
    }
    errs.sort_by(f64::total_cmp);
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    let rank = ((0.95 * errs.len() as f64).ceil() as usize).clamp(1, errs.len());
    Ok(SurfaceError {
        mean,
        p95: errs[rank - 1],
        count: errs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::Surfel;
    use crate::image::Image;
    use approx::assert_relative_eq;
    use nalgebra::Vector6;
    use proptest::prelude::*;

    fn map(values: &[f32], w: usize) -> DepthMap {
        Image::from_vec(w, values.len() / w, values.to_vec())
    }

    #[test]
    fn identical_maps_score_zero() {
        let g = map(&[0.1, 0.2, 0.0, 0.3], 2);
        let m = depth_metrics(&g, &g, true).unwrap();
        assert_eq!((m.rel, m.log10, m.rms), (0.0, 0.0, 0.0));
        assert_eq!(m.compared, 3);
    }

    #[test]
    fn doubled_prediction_closed_form() {
        let g = map(&[0.5, 1.0, 2.0, 4.0], 2);
        let p = g.map(|v| 2.0 * v);
        let m = depth_metrics(&p, &g, false).unwrap();
        assert_relative_eq!(m.rel, 1.0, epsilon = 1e-12);
        assert_relative_eq!(m.log10, 2f64.log10(), epsilon = 1e-12);
        let mean_sq = (0.25 + 1.0 + 4.0 + 16.0) / 4.0;
        assert_relative_eq!(m.rms, f64::sqrt(mean_sq), epsilon = 1e-12);
    }

    #[test]
    fn two_pixel_worked_example() {
        // rel = (0.5 + 0.5) / 2; log10 = (|log10 0.5| + |log10 1.5|) / 2; rms = 1.
        let m = depth_metrics(&map(&[1.0, 3.0], 2), &map(&[2.0, 2.0], 2), false).unwrap();
        assert_relative_eq!(m.rel, 0.5, epsilon = 1e-9);
        assert_relative_eq!(m.log10, 0.238560627359831, epsilon = 1e-9);
        assert_relative_eq!(m.rms, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn no_overlap_is_an_error() {
        let p = map(&[0.0, 1.0], 2);
        let g = map(&[1.0, 0.0], 2);
        assert!(matches!(
            depth_metrics(&p, &g, true),
            Err(Error::EmptyOverlap)
        ));
        assert!(depth_metrics(&map(&[1.0], 1), &g, true).is_err());
    }

    #[test]
    fn rel_is_asymmetric_rms_symmetric() {
        let a = map(&[1.0, 3.0], 2);
        let b = map(&[2.0, 2.0], 2);
        let ab = depth_metrics(&a, &b, false).unwrap();
        let ba = depth_metrics(&b, &a, false).unwrap();
        assert_relative_eq!(ab.rms, ba.rms, epsilon = 1e-15);
        assert!((ab.rel - ba.rel).abs() > 0.1);
    }

    fn line_trajectory(n: usize) -> Vec<Pose> {
        (0..n)
            .map(|k| {
                let xi = Vector6::new(
                    0.001 * k as f64,
                    0.0005 * (k as f64).sin(),
                    0.002 * k as f64,
                    0.01 * k as f64,
                    0.0,
                    0.02,
                );
                Pose::exp(&xi)
            })
            .collect()
    }

    #[test]
    fn ate_of_identical_trajectories_is_zero() {
        let gt = line_trajectory(10);
        assert!(ate(&gt, &gt).unwrap().ate_rmse < 1e-12);
    }

    #[test]
    fn ate_length_mismatch() {
        let gt = line_trajectory(10);
        assert!(matches!(ate(&gt[..9], &gt), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn ate_is_gauge_invariant() {
        let gt = line_trajectory(12);
        let g = Pose::exp(&Vector6::new(0.3, -0.2, 0.1, 0.5, -1.0, 0.7));
        // Moving every camera by the same world transform.
        let est: Vec<_> = gt.iter().map(|p| p.compose(&g.inverse())).collect();
        let err = ate(&est, &gt).unwrap();
        assert!(err.ate_rmse < 1e-9, "{}", err.ate_rmse);
    }

    #[test]
    fn ate_rmse_is_rms_of_per_frame_errors() {
        let gt = line_trajectory(8);
        let mut est = gt.clone();
        est[3] = Pose::new(
            est[3].rotation,
            est[3].translation + Vector3::new(0.0, 0.002, 0.0),
        );
        let err = ate(&est, &gt).unwrap();
        let rms = (err.per_frame_errors.iter().map(|e| e * e).sum::<f64>() / 8.0).sqrt();
        assert_relative_eq!(err.ate_rmse, rms, epsilon = 1e-15);
    }

    #[test]
    fn surface_error_of_exact_and_offset_surfels() {
        let scene = ColonScene::cylinder(0.0125);
        let mut exact = SurfelMap::new(1.0, usize::MAX);
        let mut shifted = SurfelMap::new(1.0, usize::MAX);
        for k in 0..500 {
            let theta = k as f64 * 0.37;
            let z = 0.001 * k as f64 * 0.3;
            let n_in = Vector3::new(-theta.cos(), -theta.sin(), 0.0);
            let on = Vector3::new(0.0125 * theta.cos(), 0.0125 * theta.sin(), z);
            exact.push(Surfel::new(on, n_in, 1e-4, [0.5; 3], 2.0, 0));
            shifted.push(Surfel::new(on - n_in * 0.001, n_in, 1e-4, [0.5; 3], 2.0, 0));
        }
        let e = surface_error(&exact, &scene).unwrap();
        assert!(e.mean < 1e-9 && e.count == 500);
        let s = surface_error(&shifted, &scene).unwrap();
        assert_relative_eq!(s.mean, 0.001, max_relative = 0.05);
        assert!(surface_error(&SurfelMap::new(1.0, 10), &scene).is_err());
    }

    proptest! {
        #[test]
        fn metrics_are_permutation_invariant(
            vals in prop::collection::vec((0.01f32..1.0, 0.01f32..1.0), 2..40),
            rot in 0usize..40,
        ) {
            let n = vals.len();
            let p: Vec<f32> = vals.iter().map(|v| v.0).collect();
            let g: Vec<f32> = vals.iter().map(|v| v.1).collect();
            let shift = |v: &[f32]| { let mut v = v.to_vec(); v.rotate_left(rot % n); v };
            let a = depth_metrics(&map(&p, n), &map(&g, n), true).unwrap();
            let b = depth_metrics(&map(&shift(&p), n), &map(&shift(&g), n), true).unwrap();
            prop_assert!((a.rel - b.rel).abs() < 1e-12);
            prop_assert!((a.log10 - b.log10).abs() < 1e-12);
            prop_assert!((a.rms - b.rms).abs() < 1e-12);
        }
    }
}
