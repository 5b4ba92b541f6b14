//! Sphere-traced rendering under a point light co-located with the camera.

use nalgebra::Vector3;
use rayon::prelude::*;

use super::{AppearanceParams, ColonScene};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::image::{luminance, DepthMap, Frame, Image, RgbImage};

/// Light power in W-equivalent units of m^2: an albedo-1 wall facing the
/// light at 2 cm renders at full intensity.
pub const DEFAULT_LIGHT_POWER: f64 = 4e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointLight {
    pub position: Vector3<f64>,
    pub power: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderConfig {
    /// Rays that travel this far (m) without a hit produce depth 0.
    pub max_range: f64,
    /// Hits are bracketed until this close to the surface (m).
    pub tolerance: f64,
    pub max_steps: usize,
    pub light_power: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            max_range: 0.3,
            tolerance: 1e-5,
            max_steps: 256,
            light_power: DEFAULT_LIGHT_POWER,
        }
    }
}

/// Diffuse and specular contributions, unclamped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShadeTerms {
    pub diffuse: [f64; 3],
    /// White highlight added equally to each channel.
    pub specular: f64,
}

impl ShadeTerms {
    pub fn total(&self) -> [f64; 3] {
        self.diffuse.map(|c| c + self.specular)
    }
}

/// Blinn-Phong with inverse-square fall-off on the diffuse term:
/// `albedo * power * max(0, n.l) / d^2 + strength * max(0, n.h)^exponent`.
///
/// `normal` and `view_dir` are unit vectors; `view_dir` points from the
/// surface towards the viewer.
pub fn shade(
    hit_point: &Vector3<f64>,
    normal: &Vector3<f64>,
    view_dir: &Vector3<f64>,
    light: &PointLight,
    app: &AppearanceParams,
) -> ShadeTerms {
    let to_light = light.position - hit_point;
    let d2 = to_light.norm_squared();
    let l = to_light / d2.sqrt();
    let n_dot_l = normal.dot(&l).max(0.0);
    let albedo = app.albedo(hit_point);
    let diffuse = albedo.map(|a| a * light.power * n_dot_l / d2);
    let specular = if app.specular_strength > 0.0 {
        let h = (l + view_dir).normalize();
        app.specular_strength * normal.dot(&h).max(0.0).powf(app.specular_exponent)
    } else {
        0.0
    };
    ShadeTerms { diffuse, specular }
}

/// Renders RGB and exact z-depth.
pub fn render_frame(scene: &ColonScene, pose: &Pose, intr: &CameraIntrinsics) -> Frame {
    render_frame_with(scene, pose, intr, &RenderConfig::default())
}

pub fn render_frame_with(
    scene: &ColonScene,
    pose: &Pose,
    intr: &CameraIntrinsics,
    cfg: &RenderConfig,
) -> Frame {
    render_frame_detailed(scene, pose, intr, cfg).frame
}

/// A rendered frame plus the per-pixel luminance of each shading term.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub frame: Frame,
    pub diffuse_luma: Image<f32>,
    pub specular: Image<f32>,
    /// Sphere-tracing steps per pixel.
    pub steps: Image<u16>,
}

struct PixelSample {
    rgb: [f32; 3],
    depth: f32,
    diffuse: f32,
    specular: f32,
    steps: u16,
}

pub fn render_frame_detailed(
    scene: &ColonScene,
    pose: &Pose,
    intr: &CameraIntrinsics,
    cfg: &RenderConfig,
) -> RenderOutput {
    let (w, h) = (intr.width, intr.height);
    let origin = pose.camera_center();
    let cam_to_world = pose.rotation.transpose();
    let light = PointLight {
        position: origin,
        power: cfg.light_power,
    };
    let half_diag2 =
        (intr.cx.max(w as f64 - intr.cx)).powi(2) + (intr.cy.max(h as f64 - intr.cy)).powi(2);

    let rows: Vec<Vec<PixelSample>> = (0..h)
        .into_par_iter()
        .map(|v| {
            (0..w)
                .map(|u| {
                    let ray = intr.ray(u as f64, v as f64);
                    let dir_cam = ray.normalize();
                    let dir = cam_to_world * dir_cam;
                    let (hit, steps) = trace(scene, &origin, &dir, cfg);
                    let Some(t) = hit else {
                        return PixelSample {
                            rgb: [0.0; 3],
                            depth: 0.0,
                            diffuse: 0.0,
                            specular: 0.0,
                            steps,
                        };
                    };
                    let p = origin + dir * t;
                    let normal = scene.sdf_gradient(&p).normalize();
                    let terms = shade(&p, &normal, &(-dir), &light, &scene.appearance);
                    let r2 =
                        ((u as f64 - intr.cx).powi(2) + (v as f64 - intr.cy).powi(2)) / half_diag2;
                    let vignette = 1.0 - scene.appearance.vignette_strength * r2;
                    let rgb = terms.total().map(|c| (c * vignette).clamp(0.0, 1.0) as f32);
                    let diffuse = terms.diffuse.map(|c| c as f32);
                    PixelSample {
                        rgb,
                        depth: (t * dir_cam.z) as f32,
                        diffuse: luminance(diffuse) as f32,
                        specular: terms.specular as f32,
                        steps,
                    }
                })
                .collect()
        })
        .collect();

    let mut rgb: RgbImage = Image::filled(w, h, [0.0; 3]);
    let mut depth: DepthMap = Image::filled(w, h, 0.0);
    let mut diffuse_luma = Image::filled(w, h, 0.0f32);
    let mut specular = Image::filled(w, h, 0.0f32);
    let mut steps = Image::filled(w, h, 0u16);
    for (v, row) in rows.into_iter().enumerate() {
        for (u, px) in row.into_iter().enumerate() {
            rgb.set(u, v, px.rgb);
            depth.set(u, v, px.depth);
            diffuse_luma.set(u, v, px.diffuse);
            specular.set(u, v, px.specular);
            steps.set(u, v, px.steps);
        }
    }
    RenderOutput {
        frame: Frame::new(rgb, depth, 0),
        diffuse_luma,
        specular,
        steps,
    }
}

/// Sphere tracing with a Lipschitz-scaled step and a depth-proportional
/// minimum step; a sign change is then bisected to well below `tolerance`.
/// Returns the hit distance along the unit ray and the steps spent.
fn trace(
    scene: &ColonScene,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    cfg: &RenderConfig,
) -> (Option<f64>, u16) {
    let inv_lipschitz = 1.0 / scene.lipschitz();
    let mut t = 0.0;
    let mut dist = scene.sdf(origin);
    if dist <= 0.0 {
        return (None, 0);
    }
    let mut steps = 0usize;
    while steps < cfg.max_steps {
        steps += 1;
        let min_step = 1e-3 * t + 0.1 * cfg.tolerance;
        let mut next = t + (dist * inv_lipschitz).max(min_step);
        let mut at_limit = false;
        if next >= cfg.max_range {
            next = cfg.max_range;
            at_limit = true;
        }
        let next_dist = scene.sdf(&(origin + dir * next));
        if next_dist < 0.0 {
            let (hit, extra) = bisect(scene, origin, dir, t, next, cfg.tolerance);
            return (Some(hit), (steps + extra) as u16);
        }
        if at_limit {
            return (None, steps as u16);
        }
        t = next;
        dist = next_dist;
    }
    (None, steps as u16)
}

fn bisect(
    scene: &ColonScene,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> (f64, usize) {
    // Bracket width, not |sdf|, bounds the depth error at grazing incidence.
    let width = 1e-3 * tol;
    let mut n = 0;
    while hi - lo > width && n < 64 {
        let mid = 0.5 * (lo + hi);
        if scene.sdf(&(origin + dir * mid)) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        n += 1;
    }
    (0.5 * (lo + hi), n)
}
