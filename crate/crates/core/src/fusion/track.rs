//! Frame-to-model tracking.
//!
//! The unknown is `T_rel`, mapping the current camera frame into the frame of
//! the predicted model view; the current pose is `T_rel^-1 * T_view`. Updates
//! are left-multiplied, `T_rel <- exp(xi) * T_rel`.
//!
//! The geometric term is point-to-plane between current points and the
//! surfels they project onto. The photometric term warps each visible surfel
//! into the current image and compares its stored albedo with the current
//! intensity there, compensated for the co-located light.

use nalgebra::{Matrix2x3, Matrix3x6, Matrix6, RowVector2, Vector3, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::illumination::IlluminationModel;
use super::mask::specular_mask;
use super::normals::normals_from_points;
use super::predict::ModelView;
use crate::geometry::{skew, CameraIntrinsics, Pose};
use crate::image::{luminance, Frame, Image};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackingConfig {
    pub pyramid_levels: usize,
    /// Gauss-Newton iterations per pyramid level.
    pub max_iterations: usize,
    pub w_rgb: f64,
    /// Meters.
    pub huber_geometric: f64,
    pub huber_photometric: f64,
    pub min_inlier_fraction: f64,
    /// Iteration stops once the twist update is shorter than this.
    pub min_update: f64,
    /// Largest point-to-surfel distance accepted by association (m).
    pub max_distance: f64,
    /// Largest normal disagreement accepted by association (rad). The default
    /// only rejects opposing surfaces: normals of predicted depth are too noisy
    /// for a tighter gate.
    pub max_normal_angle: f64,
    /// Relative depth disagreement beyond which a warped surfel counts as occluded.
    pub occlusion_tolerance: f64,
    pub use_photometric: bool,
    /// Luminance above which a pixel is treated as a highlight.
    pub mask_threshold: f64,
    pub illumination: IlluminationModel,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            pyramid_levels: 3,
            max_iterations: 10,
            w_rgb: 0.1,
            huber_geometric: 0.003,
            huber_photometric: 0.1,
            min_inlier_fraction: 0.4,
            min_update: 1e-6,
            max_distance: 0.01,
            max_normal_angle: 90f64.to_radians(),
            occlusion_tolerance: 0.1,
            use_photometric: true,
            mask_threshold: 0.7,
            illumination: IlluminationModel::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingResult {
    /// Estimated camera-from-world pose; the initial guess when not converged.
    #[serde(skip)]
    pub pose: Pose,
    /// Mean robust cost per residual at the final estimate.
    pub final_cost: f64,
    pub iterations: usize,
    pub inlier_fraction: f64,
    pub converged: bool,
    pub geometric_residuals: usize,
    pub photometric_residuals: usize,
    /// Warped surfels dropped because they landed on masked pixels.
    pub masked_skipped: usize,
}

/// Current-frame data at one pyramid level.
#[derive(Clone, Debug)]
pub struct Level {
    pub intrinsics: CameraIntrinsics,
    pub points: Image<Option<Vector3<f64>>>,
    pub normals: Image<Option<Vector3<f64>>>,
    pub luma: Image<f64>,
    pub mask: Image<bool>,
}

impl Level {
    fn from_frame(frame: &Frame, mask: &Image<bool>, intr: &CameraIntrinsics) -> Self {
        let depth = &frame.depth;
        let points = Image::from_fn(depth.width(), depth.height(), |u, v| {
            let d = *depth.get(u, v) as f64;
            (d > 0.0).then(|| intr.unproject(u as f64, v as f64, d))
        });
        let normals = normals_from_points(&points);
        Self {
            intrinsics: *intr,
            points,
            normals,
            luma: frame.rgb.map(|c| luminance(*c)),
            mask: mask.clone(),
        }
    }

    /// 2x2 block average; a depth block is kept only if all four samples
    /// are valid and agree within 5%.
    fn downsample(&self) -> Self {
        let intr = self.intrinsics.half();
        let (w, h) = (intr.width, intr.height);
        let depth_at = |u: usize, v: usize| self.points.get(u, v).map(|p| p.z);
        let points = Image::from_fn(w, h, |u, v| {
            let mut ds = [0.0; 4];
            for (k, d) in ds.iter_mut().enumerate() {
                *d = depth_at(2 * u + k % 2, 2 * v + k / 2)?;
            }
            let mean = ds.iter().sum::<f64>() / 4.0;
            let spread = ds.iter().cloned().fold(f64::MIN, f64::max)
                - ds.iter().cloned().fold(f64::MAX, f64::min);
            (spread <= 0.05 * mean).then(|| intr.unproject(u as f64, v as f64, mean))
        });
        let normals = normals_from_points(&points);
        let block = |img: &Image<f64>, u: usize, v: usize| {
            (img.get(2 * u, 2 * v)
                + img.get(2 * u + 1, 2 * v)
                + img.get(2 * u, 2 * v + 1)
                + img.get(2 * u + 1, 2 * v + 1))
                / 4.0
        };
        let luma = Image::from_fn(w, h, |u, v| block(&self.luma, u, v));
        let mask = Image::from_fn(w, h, |u, v| {
            *self.mask.get(2 * u, 2 * v)
                || *self.mask.get(2 * u + 1, 2 * v)
                || *self.mask.get(2 * u, 2 * v + 1)
                || *self.mask.get(2 * u + 1, 2 * v + 1)
        });
        Self {
            intrinsics: intr,
            points,
            normals,
            luma,
            mask,
        }
    }

    pub fn valid_pixels(&self) -> usize {
        self.points
            .as_slice()
            .iter()
            .filter(|p| p.is_some())
            .count()
    }
}

/// A current point paired with the model surfel it projects onto.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometricPair {
    /// Current camera frame.
    pub point: Vector3<f64>,
    /// Index into `ModelView::visible`.
    pub surfel: u32,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Associations {
    pub geometric: Vec<GeometricPair>,
    /// Indices into `ModelView::visible` that warp onto usable current pixels.
    pub photometric: Vec<u32>,
    pub masked_skipped: usize,
}

/// A single residual and its derivative with respect to the left twist.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Residual {
    pub value: f64,
    pub jacobian: Vector6<f64>,
}

#[derive(Clone, Copy, Debug, Default)]
struct NormalEquations {
    h: Matrix6<f64>,
    b: Vector6<f64>,
    cost: f64,
    count: usize,
}

impl NormalEquations {
    fn add(&mut self, r: &Residual, weight: f64, delta: f64) {
        let w = weight * huber_weight(r.value, delta);
        self.h += r.jacobian * r.jacobian.transpose() * w;
        self.b += r.jacobian * (r.value * w);
        self.cost += weight * huber_cost(r.value, delta);
        self.count += 1;
    }

    fn merge(mut self, other: &Self) -> Self {
        self.h += other.h;
        self.b += other.b;
        self.cost += other.cost;
        self.count += other.count;
        self
    }
}

fn huber_weight(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        1.0
    } else {
        delta / a
    }
}

fn huber_cost(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Catmull-Rom weights and their derivatives at fractional offset `t`.
fn catmull_rom(t: f64) -> ([f64; 4], [f64; 4]) {
    let t2 = t * t;
    let t3 = t2 * t;
    let w = [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ];
    let dw = [
        0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
        0.5 * (9.0 * t2 - 10.0 * t),
        0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
        0.5 * (3.0 * t2 - 2.0 * t),
    ];
    (w, dw)
}

/// Bicubic value and gradient; `None` when the 4x4 support leaves the image.
pub fn sample_bicubic(img: &Image<f64>, u: f64, v: f64) -> Option<(f64, f64, f64)> {
    let (u0, v0) = (u.floor(), v.floor());
    if u0 < 1.0
        || v0 < 1.0
        || u0 + 2.0 > (img.width() - 1) as f64
        || v0 + 2.0 > (img.height() - 1) as f64
    {
        return None;
    }
    let (x0, y0) = (u0 as usize - 1, v0 as usize - 1);
    let (wu, dwu) = catmull_rom(u - u0);
    let (wv, dwv) = catmull_rom(v - v0);
    let (mut val, mut du, mut dv) = (0.0, 0.0, 0.0);
    for j in 0..4 {
        let mut row = 0.0;
        let mut row_du = 0.0;
        for i in 0..4 {
            let x = *img.get(x0 + i, y0 + j);
            row += wu[i] * x;
            row_du += dwu[i] * x;
        }
        val += wv[j] * row;
        du += wv[j] * row_du;
        dv += dwv[j] * row;
    }
    Some((val, du, dv))
}

/// Everything needed to evaluate the tracking cost for one frame.
pub struct TrackingProblem<'a> {
    pub model: &'a ModelView,
    pub levels: Vec<Level>,
    pub config: TrackingConfig,
    /// Stored albedo luma of each visible surfel.
    model_luma: Vec<f64>,
}

impl<'a> TrackingProblem<'a> {
    pub fn new(
        model: &'a ModelView,
        current: &Frame,
        mask: &Image<bool>,
        config: &TrackingConfig,
    ) -> Self {
        let mut levels = vec![Level::from_frame(current, mask, &model.intrinsics)];
        for _ in 1..config.pyramid_levels.max(1) {
            let next = levels.last().unwrap().downsample();
            if next.intrinsics.width < 8 || next.intrinsics.height < 8 {
                break;
            }
            levels.push(next);
        }
        let model_luma = model.visible.iter().map(|s| luminance(s.color)).collect();
        Self {
            model,
            levels,
            config: *config,
            model_luma,
        }
    }

    /// Relative transform for an absolute current-pose guess.
    pub fn relative_pose(&self, current: &Pose) -> Pose {
        self.model.pose.compose(&current.inverse())
    }

    /// Absolute current pose for a relative transform.
    pub fn absolute_pose(&self, t_rel: &Pose) -> Pose {
        t_rel.inverse().compose(&self.model.pose)
    }

    /// Projective association at `level` under `t_rel`.
    pub fn associate(&self, level: usize, t_rel: &Pose) -> Associations {
        let lvl = &self.levels[level];
        let (w, h) = (lvl.intrinsics.width, lvl.intrinsics.height);
        let cos_max = self.config.max_normal_angle.cos();
        let geometric: Vec<GeometricPair> = (0..h)
            .into_par_iter()
            .map(|v| {
                let mut row = Vec::new();
                for u in 0..w {
                    let (Some(p), Some(n)) = (lvl.points.get(u, v), lvl.normals.get(u, v)) else {
                        continue;
                    };
                    let q = t_rel.transform_point(p);
                    let Some(idx) = self.lookup(&q) else { continue };
                    let s = &self.model.visible[idx as usize];
                    if (q - s.position).norm() > self.config.max_distance
                        || t_rel.transform_vector(n).dot(&s.normal) < cos_max
                    {
                        continue;
                    }
                    row.push(GeometricPair {
                        point: *p,
                        surfel: idx,
                    });
                }
                row
            })
            .collect::<Vec<_>>()
            .concat();

        let mut photometric = Vec::new();
        let mut masked_skipped = 0;
        if self.config.use_photometric && self.config.w_rgb > 0.0 {
            let inv = t_rel.inverse();
            for (i, s) in self.model.visible.iter().enumerate() {
                if s.color_weight <= 0.0 {
                    continue;
                }
                let x = inv.transform_point(&s.position);
                let Some((u, v)) = lvl.intrinsics.project(&x) else {
                    continue;
                };
                if sample_bicubic(&lvl.luma, u, v).is_none() {
                    continue;
                }
                let (ui, vi) = (u.round() as usize, v.round() as usize);
                if *lvl.mask.get(ui, vi) {
                    masked_skipped += 1;
                    continue;
                }
                match lvl.points.get(ui, vi) {
                    Some(p) if (p.z - x.z).abs() <= self.config.occlusion_tolerance * x.z => {}
                    _ => continue,
                }
                let n = inv.transform_vector(&s.normal);
                if self.config.illumination.gain(&x, &n).is_none() {
                    continue;
                }
                photometric.push(i as u32);
            }
        }
        Associations {
            geometric,
            photometric,
            masked_skipped,
        }
    }

    /// Surfel drawn at the model-view pixel nearest to `q` (model camera frame).
    fn lookup(&self, q: &Vector3<f64>) -> Option<u32> {
        let intr = &self.model.intrinsics;
        let (u, v) = intr.project(q)?;
        let (u, v) = (u.round(), v.round());
        if u < 0.0 || v < 0.0 || u >= intr.width as f64 || v >= intr.height as f64 {
            return None;
        }
        *self.model.index.get(u as usize, v as usize)
    }

    /// Point-to-plane residual `(T_rel p - P) . n`.
    pub fn geometric_residual(&self, pair: &GeometricPair, t_rel: &Pose) -> Residual {
        let s = &self.model.visible[pair.surfel as usize];
        let q = t_rel.transform_point(&pair.point);
        let n = s.normal;
        let qn = q.cross(&n);
        Residual {
            value: (q - s.position).dot(&n),
            jacobian: Vector6::new(n.x, n.y, n.z, qn.x, qn.y, qn.z),
        }
    }

    /// Compensated current intensity at the warped surfel minus its stored albedo.
    pub fn photometric_residual(
        &self,
        level: usize,
        surfel: u32,
        t_rel: &Pose,
    ) -> Option<Residual> {
        let lvl = &self.levels[level];
        let intr = &lvl.intrinsics;
        let illum = &self.config.illumination;
        let s = &self.model.visible[surfel as usize];
        let rt = t_rel.rotation.transpose();
        let x = rt * (s.position - t_rel.translation);
        let n = rt * s.normal;
        let (u, v) = intr.project(&x)?;
        let (l, lu, lv) = sample_bicubic(&lvl.luma, u, v)?;
        let gain = illum.gain(&x, &n)?;

        // d x / d xi and d n / d xi.
        let mut dx = Matrix3x6::zeros();
        dx.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-rt));
        dx.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(rt * skew(&s.position)));
        let mut dn = Matrix3x6::zeros();
        dn.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(rt * skew(&s.normal)));

        let iz = 1.0 / x.z;
        let d_proj = Matrix2x3::new(
            intr.fx * iz,
            0.0,
            -intr.fx * x.x * iz * iz,
            0.0,
            intr.fy * iz,
            -intr.fy * x.y * iz * iz,
        );
        let grad = RowVector2::new(lu, lv);
        let mut j = (grad * d_proj * dx).transpose() * gain;

        if illum.enabled {
            let d = x.norm();
            let c = -n.dot(&x);
            let p = illum.light_power;
            let dg_dx = x * (3.0 * d / (p * c)) + n * (d * d * d / (p * c * c));
            let dg_dn = x * (d * d * d / (p * c * c));
            j += (dg_dx.transpose() * dx + dg_dn.transpose() * dn).transpose() * l;
        }
        Some(Residual {
            value: l * gain - self.model_luma[surfel as usize],
            jacobian: j,
        })
    }

    fn normal_equations(
        &self,
        level: usize,
        assoc: &Associations,
        t_rel: &Pose,
    ) -> (NormalEquations, NormalEquations) {
        const CHUNK: usize = 1024;
        let geo = assoc
            .geometric
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut eq = NormalEquations::default();
                for pair in chunk {
                    eq.add(
                        &self.geometric_residual(pair, t_rel),
                        1.0,
                        self.config.huber_geometric,
                    );
                }
                eq
            })
            .collect::<Vec<_>>()
            .iter()
            .fold(NormalEquations::default(), |a, b| a.merge(b));
        let photo = assoc
            .photometric
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut eq = NormalEquations::default();
                for &m in chunk {
                    if let Some(r) = self.photometric_residual(level, m, t_rel) {
                        eq.add(&r, self.config.w_rgb, self.config.huber_photometric);
                    }
                }
                eq
            })
            .collect::<Vec<_>>()
            .iter()
            .fold(NormalEquations::default(), |a, b| a.merge(b));
        (geo, photo)
    }

    /// Total robust cost at `t_rel` with the given associations.
    pub fn cost(&self, level: usize, assoc: &Associations, t_rel: &Pose) -> f64 {
        let (g, p) = self.normal_equations(level, assoc, t_rel);
        g.cost + p.cost
    }

    /// Fraction of valid level-0 current pixels whose geometric residual is
    /// within three Huber deltas.
    pub fn inlier_fraction(&self, t_rel: &Pose) -> f64 {
        let valid = self.levels[0].valid_pixels();
        if valid == 0 {
            return 0.0;
        }
        let assoc = self.associate(0, t_rel);
        let limit = 3.0 * self.config.huber_geometric;
        let inliers = assoc
            .geometric
            .iter()
            .filter(|p| self.geometric_residual(p, t_rel).value.abs() < limit)
            .count();
        inliers as f64 / valid as f64
    }

    /// Coarse-to-fine Gauss-Newton from the absolute pose guess `init`.
    pub fn solve(&self, init: &Pose) -> TrackingResult {
        let mut t_rel = self.relative_pose(init);
        let mut iterations = 0;
        let mut degenerate = false;
        'levels: for level in (0..self.levels.len()).rev() {
            for _ in 0..self.config.max_iterations {
                let assoc = self.associate(level, &t_rel);
                let (g, p) = self.normal_equations(level, &assoc, &t_rel);
                if g.count + p.count < 6 {
                    degenerate = true;
                    break 'levels;
                }
                let h = g.h + p.h;
                let b = g.b + p.b;
                let Some(xi) = solve6(&h, &(-b)) else {
                    degenerate = true;
                    break 'levels;
                };
                t_rel = t_rel.retract(&xi);
                iterations += 1;
                if xi.norm() < self.config.min_update {
                    break;
                }
            }
        }

        let assoc = self.associate(0, &t_rel);
        let (g, p) = self.normal_equations(0, &assoc, &t_rel);
        let count = g.count + p.count;
        let final_cost = if count > 0 {
            (g.cost + p.cost) / count as f64
        } else {
            f64::INFINITY
        };
        let inlier_fraction = self.inlier_fraction(&t_rel);
        let pose = self.absolute_pose(&t_rel);
        let converged =
            !degenerate && pose.is_valid(1e-6) && inlier_fraction > self.config.min_inlier_fraction;
        TrackingResult {
            pose: if converged { pose } else { *init },
            final_cost,
            iterations,
            inlier_fraction,
            converged,
            geometric_residuals: g.count,
            photometric_residuals: p.count,
            masked_skipped: assoc.masked_skipped,
        }
    }
}

fn solve6(h: &Matrix6<f64>, rhs: &Vector6<f64>) -> Option<Vector6<f64>> {
    if let Some(ch) = h.cholesky() {
        let x = ch.solve(rhs);
        if x.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    let x = h.svd(true, true).solve(rhs, 1e-12 * h.norm()).ok()?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Tracks `current` against `model`, masking highlights at `config.mask_threshold`.
pub fn track(
    model: &ModelView,
    current: &Frame,
    init: &Pose,
    config: &TrackingConfig,
) -> TrackingResult {
    let mask = specular_mask(&current.rgb, config.mask_threshold);
    track_with_mask(model, current, &mask, init, config)
}

pub fn track_with_mask(
    model: &ModelView,
    current: &Frame,
    mask: &Image<bool>,
    init: &Pose,
    config: &TrackingConfig,
) -> TrackingResult {
    TrackingProblem::new(model, current, mask, config).solve(init)
}
