use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::illumination::IlluminationModel;
use super::normals::compute_normals;
use super::surfel::{Surfel, SurfelMap};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::image::{Frame, Image};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionConfig {
    /// Depth standard deviation per meter of depth.
    pub depth_sigma_scale: f64,
    /// Association gate in depth standard deviations.
    pub gate_sigmas: f64,
    pub max_normal_angle: f64,
    /// Unstable surfels unseen for this many frames are dropped.
    pub stale_frames: usize,
    /// Lower bound on `|n.v|` in the new-surfel radius.
    pub radius_min_cos: f64,
    pub illumination: IlluminationModel,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            depth_sigma_scale: 0.01,
            gate_sigmas: 3.0,
            max_normal_angle: 30f64.to_radians(),
            stale_frames: 20,
            radius_min_cos: 0.3,
            illumination: IlluminationModel::default(),
        }
    }
}

/// What happened to the pixels and surfels during one fuse.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuseStats {
    pub updated: usize,
    pub inserted: usize,
    /// Pixels whose best surfel was claimed by a closer pixel.
    pub covered: usize,
    pub removed: usize,
    /// Inserts refused because the map is full.
    pub rejected: usize,
    /// Updates whose colour was skipped because the pixel is masked.
    pub masked_color_skips: usize,
}

struct Observation {
    point: Vector3<f64>,
    normal: Vector3<f64>,
    rgb: [f32; 3],
    masked: bool,
}

/// Folds `frame` (depth already supplied) into `map` at `pose`.
///
/// Existing surfels are projected to their nearest pixel; each valid pixel
/// looks for a compatible surfel in its 3x3 neighbourhood, and each surfel is
/// updated by at most one pixel, the one whose ray passes closest to it.
pub fn fuse(
    map: &mut SurfelMap,
    frame: &Frame,
    pose: &Pose,
    intr: &CameraIntrinsics,
    mask: &Image<bool>,
    config: &FusionConfig,
) -> FuseStats {
    let (w, h) = (intr.width, intr.height);
    let now = frame.frame_index;
    let normals = compute_normals(&frame.depth, intr);
    let obs: Vec<Option<Observation>> = (0..w * h)
        .map(|k| {
            let (u, v) = (k % w, k / w);
            let d = *frame.depth.get(u, v) as f64;
            let n = (*normals.get(u, v))?;
            (d > 0.0).then(|| Observation {
                point: intr.unproject(u as f64, v as f64, d),
                normal: n,
                rgb: *frame.rgb.get(u, v),
                masked: *mask.get(u, v),
            })
        })
        .collect();

    // Nearest surfel projecting onto each pixel.
    let mut proj: Vec<Option<(usize, f64)>> = vec![None; w * h];
    let cam: Vec<(Vector3<f64>, Vector3<f64>)> = map
        .surfels
        .iter()
        .map(|s| {
            (
                pose.transform_point(&s.position),
                pose.transform_vector(&s.normal),
            )
        })
        .collect();
    for (i, (p, _)) in cam.iter().enumerate() {
        let Some((u, v)) = intr.project(p) else {
            continue;
        };
        let (u, v) = (u.round(), v.round());
        if u < 0.0 || v < 0.0 || u >= w as f64 || v >= h as f64 {
            continue;
        }
        let k = v as usize * w + u as usize;
        if proj[k].is_none_or(|(_, z)| p.z < z) {
            proj[k] = Some((i, p.z));
        }
    }

    // Pixel -> candidate surfel with its ray distance.
    let cos_max = config.max_normal_angle.cos();
    let mut claim: Vec<Option<(usize, f64)>> = vec![None; w * h];
    let mut best_pixel: Vec<Option<(usize, f64)>> = vec![None; map.surfels.len()];
    for k in 0..w * h {
        let Some(o) = &obs[k] else { continue };
        let (u, v) = ((k % w) as i64, (k / w) as i64);
        let gate = config.gate_sigmas * config.depth_sigma_scale * o.point.z;
        let ray = o.point.normalize();
        let mut best: Option<(usize, f64, f64)> = None;
        for dv in -1..=1 {
            for du in -1..=1 {
                let (uu, vv) = (u + du, v + dv);
                if uu < 0 || vv < 0 || uu >= w as i64 || vv >= h as i64 {
                    continue;
                }
                let Some((i, _)) = proj[vv as usize * w + uu as usize] else {
                    continue;
                };
                let (p, n) = &cam[i];
                let dist = (p - o.point).norm();
                if dist >= gate || n.dot(&o.normal) < cos_max {
                    continue;
                }
                let perp = (p - ray * p.dot(&ray)).norm();
                if perp > map.surfels[i].radius {
                    continue;
                }
                if best.is_none_or(|(_, bd, _)| dist < bd) {
                    best = Some((i, dist, perp));
                }
            }
        }
        if let Some((i, _, perp)) = best {
            claim[k] = Some((i, perp));
            if best_pixel[i].is_none_or(|(_, bp)| perp < bp) {
                best_pixel[i] = Some((k, perp));
            }
        }
    }

    let mut stats = FuseStats::default();
    let to_world = pose.inverse();
    let f = 0.5 * (intr.fx + intr.fy);
    let illum = &config.illumination;
    for k in 0..w * h {
        let Some(o) = &obs[k] else { continue };
        match claim[k] {
            Some((i, _)) if best_pixel[i].map(|(bk, _)| bk) == Some(k) => {
                let s = &mut map.surfels[i];
                let c = s.confidence;
                let q = to_world.transform_point(&o.point);
                let nq = to_world.transform_vector(&o.normal);
                s.position = (s.position * c + q) / (c + 1.0);
                let n = s.normal * c + nq;
                s.normal = if n.norm() > 1e-12 { n.normalize() } else { nq };
                s.radius = (s.radius * c + new_radius(o, f, config)) / (c + 1.0);
                if o.masked {
                    stats.masked_color_skips += 1;
                } else {
                    let p_cam = pose.transform_point(&s.position);
                    let n_cam = pose.transform_vector(&s.normal);
                    if let Some(albedo) = illum.compensate(o.rgb, &p_cam, &n_cam) {
                        let cw = s.color_weight;
                        for (sc, a) in s.color.iter_mut().zip(albedo) {
                            *sc = (*sc * cw + a) / (cw + 1.0);
                        }
                        s.color_weight = cw + 1.0;
                    }
                }
                s.confidence = c + 1.0;
                s.last_seen = now;
                stats.updated += 1;
            }
            Some(_) => stats.covered += 1,
            None => {
                let albedo = if o.masked {
                    None
                } else {
                    illum.compensate(o.rgb, &o.point, &o.normal)
                };
                let mut s = Surfel::new(
                    to_world.transform_point(&o.point),
                    to_world.transform_vector(&o.normal),
                    new_radius(o, f, config),
                    albedo.unwrap_or([0.0; 3]),
                    1.0,
                    now,
                );
                s.color_weight = if albedo.is_some() { 1.0 } else { 0.0 };
                if o.masked {
                    stats.masked_color_skips += 1;
                }
                if map.push(s) {
                    stats.inserted += 1;
                } else {
                    stats.rejected += 1;
                }
            }
        }
    }

    let before = map.surfels.len();
    let threshold = map.stability_threshold;
    let stale = config.stale_frames;
    map.surfels
        .retain(|s| s.confidence >= threshold || now.saturating_sub(s.last_seen) < stale);
    stats.removed = before - map.surfels.len();
    stats
}

fn new_radius(o: &Observation, f: f64, config: &FusionConfig) -> f64 {
    let view = o.point.normalize();
    let cos = o.normal.dot(&view).abs().max(config.radius_min_cos);
    o.point.z / f * std::f64::consts::SQRT_2 / cos
}
