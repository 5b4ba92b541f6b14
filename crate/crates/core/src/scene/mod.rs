//! Procedural colon scenes, their signed distance function, and rendering.

mod centerline;
mod noise;
mod render;
mod trajectory;

use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use self::centerline::{Centerline, CenterlineSample, UniformSpline};
pub use self::noise::{fbm, value_noise};
pub use self::render::{
    render_frame, render_frame_detailed, render_frame_with, shade, PointLight, RenderConfig,
    RenderOutput, ShadeTerms, DEFAULT_LIGHT_POWER,
};
pub use self::trajectory::{generate_trajectory, TrajectoryParams};

/// Default lumen radius, roughly a human colon.
pub const DEFAULT_RADIUS: f64 = 0.0125;

/// Largest allowed |dR/ds| + |dR/(rho dtheta)| of the wall; keeps the SDF
/// gradient within a few percent of unit length.
const MAX_WALL_SLOPE: f64 = 0.25;

const KNOT_T0: f64 = -0.1;
const KNOT_T1: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Straight,
    Curved,
    Randomized,
}

impl std::str::FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "straight" => Ok(Self::Straight),
            "curved" => Ok(Self::Curved),
            "randomized" => Ok(Self::Randomized),
            other => Err(format!("unknown difficulty `{other}`")),
        }
    }
}

/// Surface appearance. `texture_scale` is in lattice cells per centimetre.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppearanceParams {
    pub base_albedo: [f64; 3],
    pub texture_octaves: u32,
    pub texture_scale: f64,
    pub texture_seed: u64,
    pub specular_strength: f64,
    pub specular_exponent: f64,
    pub vignette_strength: f64,
}

impl Default for AppearanceParams {
    fn default() -> Self {
        Self {
            base_albedo: [0.75, 0.35, 0.3],
            texture_octaves: 3,
            texture_scale: 4.0,
            texture_seed: 0,
            specular_strength: 0.2,
            specular_exponent: 32.0,
            vignette_strength: 0.0,
        }
    }
}

impl AppearanceParams {
    pub fn is_valid(&self) -> bool {
        self.base_albedo.iter().all(|c| (0.0..=1.0).contains(c))
            && self.texture_scale.is_finite()
            && self.texture_scale >= 0.0
            && (0.0..=1.0).contains(&self.specular_strength)
            && self.specular_exponent > 1.0
            && (0.0..=1.0).contains(&self.vignette_strength)
    }

    /// Textured albedo at a world point.
    pub fn albedo(&self, p: &Vector3<f64>) -> [f64; 3] {
        let n = fbm(
            self.texture_seed,
            &(p * (self.texture_scale * 100.0)),
            self.texture_octaves,
        );
        let gain = 0.55 + 0.9 * n;
        self.base_albedo.map(|c| (c * gain).clamp(0.0, 1.0))
    }

    fn sample(rng: &mut impl Rng) -> Self {
        Self {
            base_albedo: [
                rng.random_range(0.5..=0.9),
                rng.random_range(0.1..=0.5),
                rng.random_range(0.1..=0.5),
            ],
            texture_octaves: rng.random_range(1..=4),
            texture_scale: rng.random_range(2.0..8.0),
            texture_seed: rng.random(),
            specular_strength: rng.random_range(0.0..0.6),
            specular_exponent: rng.random_range(8.0..64.0),
            vignette_strength: rng.random_range(0.0..0.3),
        }
    }
}

/// Lumen radius along arclength: `r0 * (1 + modulation * sin(2 pi s / wavelength + phase))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusProfile {
    pub r0: f64,
    pub modulation: f64,
    pub wavelength: f64,
    pub phase: f64,
}

impl RadiusProfile {
    #[inline]
    pub fn at(&self, s: f64) -> f64 {
        if self.modulation == 0.0 {
            self.r0
        } else {
            self.r0 * (1.0 + self.modulation * (TAU * s / self.wavelength + self.phase).sin())
        }
    }

    pub fn max(&self) -> f64 {
        self.r0 * (1.0 + self.modulation.abs())
    }

    pub fn min(&self) -> f64 {
        self.r0 * (1.0 - self.modulation.abs())
    }

    fn max_slope(&self) -> f64 {
        if self.modulation == 0.0 {
            0.0
        } else {
            self.r0 * self.modulation.abs() * TAU / self.wavelength
        }
    }
}

/// Haustral-fold corrugation pushed inward from the wall.
///
/// The fold height is `amplitude * f(s) * (1 - contrast + contrast * cos(n theta + phase))`
/// with `f(s) = ((1 + cos(2 pi axial_frequency s)) / 2)^4`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeParams {
    pub amplitude: f64,
    /// Folds per revolution.
    pub angular_frequency: u32,
    /// Folds per meter of arclength.
    pub axial_frequency: f64,
    pub angular_contrast: f64,
    pub angular_phase: f64,
}

impl RidgeParams {
    pub fn none() -> Self {
        Self {
            amplitude: 0.0,
            angular_frequency: 0,
            axial_frequency: 0.0,
            angular_contrast: 0.0,
            angular_phase: 0.0,
        }
    }

    #[inline]
    pub fn height(&self, s: f64, theta: f64) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        let fold = 0.5 * (1.0 + (TAU * self.axial_frequency * s).cos());
        let fold = fold * fold * fold * fold;
        let angular = 1.0 - self.angular_contrast
            + self.angular_contrast
                * (self.angular_frequency as f64 * theta + self.angular_phase).cos();
        self.amplitude * fold * angular
    }

    /// Upper bounds on |dh/ds| and |dh/dtheta|.
    fn slopes(&self) -> (f64, f64) {
        // max over u of 4 u^3.5 (1-u)^0.5 is about 0.888 at u = 7/8.
        let axial = self.amplitude * 0.888 * TAU * self.axial_frequency;
        let angular = self.amplitude * self.angular_contrast * self.angular_frequency as f64;
        (axial, angular)
    }
}

/// Procedural colon: a tube around a spline centerline with modulated
/// radius and haustral folds. Its SDF is the ground-truth geometry oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct ColonScene {
    pub centerline: Centerline,
    pub radius_profile: RadiusProfile,
    pub ridge_params: RidgeParams,
    pub appearance: AppearanceParams,
    pub rng_seed: u64,
    pub difficulty: Difficulty,
    lipschitz: f64,
}

/// Geometry-only view used to compare scenes before and after appearance changes.
#[derive(Debug, PartialEq)]
pub struct SceneGeometry<'a> {
    pub centerline: &'a Centerline,
    pub radius_profile: &'a RadiusProfile,
    pub ridge_params: &'a RidgeParams,
}

impl ColonScene {
    pub fn new(
        centerline: Centerline,
        radius_profile: RadiusProfile,
        ridge_params: RidgeParams,
        appearance: AppearanceParams,
        rng_seed: u64,
        difficulty: Difficulty,
    ) -> Self {
        let mut scene = Self {
            centerline,
            radius_profile,
            ridge_params,
            appearance,
            rng_seed,
            difficulty,
            lipschitz: 1.0,
        };
        scene.lipschitz = scene.lipschitz_bound();
        scene
    }

    /// Straight cylinder of the given radius with default appearance.
    pub fn cylinder(radius: f64) -> Self {
        Self::new(
            Centerline::straight(KNOT_T0, KNOT_T1),
            RadiusProfile {
                r0: radius,
                modulation: 0.0,
                wavelength: 1.0,
                phase: 0.0,
            },
            RidgeParams::none(),
            AppearanceParams::default(),
            0,
            Difficulty::Straight,
        )
    }

    pub fn geometry(&self) -> SceneGeometry<'_> {
        SceneGeometry {
            centerline: &self.centerline,
            radius_profile: &self.radius_profile,
            ridge_params: &self.ridge_params,
        }
    }

    pub fn max_radius(&self) -> f64 {
        self.radius_profile.max()
    }

    pub fn r0(&self) -> f64 {
        self.radius_profile.r0
    }

    /// Bound on |grad sdf| used to keep sphere-tracing steps conservative.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn lipschitz_bound(&self) -> f64 {
        let (ax, ang) = self.ridge_params.slopes();
        let axial = self.radius_profile.max_slope() + ax;
        let angular = ang / (self.radius_profile.min() - self.ridge_params.amplitude).max(1e-6);
        // The arclength parameter stretches by 1 / (1 - kappa rho) off the axis.
        let (t0, t1) = self.centerline.param_range();
        let kappa = max_curvature(&self.centerline, t0, t1);
        let stretch = 1.0 / (1.0 - kappa * self.max_radius()).max(0.5);
        (1.0 + (axial * stretch).powi(2) + angular.powi(2)).sqrt() * 1.02
    }

    /// Wall radius at arclength `s` and angle `theta`.
    #[inline]
    pub fn wall_radius(&self, s: f64, theta: f64) -> f64 {
        self.radius_profile.at(s) - self.ridge_params.height(s, theta)
    }

    /// Signed distance in meters: positive in the lumen, negative in the wall.
    #[inline]
    pub fn sdf(&self, p: &Vector3<f64>) -> f64 {
        let t = self.centerline.nearest_param(p);
        let frame = self.centerline.sample(t);
        let d = p - frame.position;
        let rho = d.norm();
        let s = self.centerline.arclength(t);
        let theta = if self.ridge_params.amplitude == 0.0 {
            0.0
        } else {
            d.dot(&frame.e2).atan2(d.dot(&frame.e1))
        };
        self.wall_radius(s, theta) - rho
    }

    /// Central-difference gradient of the SDF.
    pub fn sdf_gradient(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let h = 1e-6;
        let mut g = Vector3::zeros();
        for axis in 0..3 {
            let mut e = Vector3::zeros();
            e[axis] = h;
            g[axis] = (self.sdf(&(p + e)) - self.sdf(&(p - e))) / (2.0 * h);
        }
        g
    }

    /// Wall point at centerline parameter `t` and angle `theta`.
    pub fn surface_point(&self, t: f64, theta: f64) -> Vector3<f64> {
        let f = self.centerline.sample(t);
        let s = self.centerline.arclength(t);
        let r = self.wall_radius(s, theta);
        f.position + (f.e1 * theta.cos() + f.e2 * theta.sin()) * r
    }

    /// Checks the geometric invariants by dense sampling over `[t0, t1]`.
    pub fn check_invariants(&self, t0: f64, t1: f64) -> Result<(), String> {
        let n = ((t1 - t0) / 5e-4).ceil() as usize;
        let mut min_radius = f64::INFINITY;
        for k in 0..=n {
            let t = t0 + (t1 - t0) * k as f64 / n as f64;
            let s = self.centerline.arclength(t);
            let r = self.radius_profile.at(s);
            if !(r > 0.0 && r > self.ridge_params.amplitude) {
                return Err(format!("radius {r} not above fold amplitude at t={t}"));
            }
            for j in 0..16 {
                let theta = TAU * j as f64 / 16.0;
                min_radius = min_radius.min(self.wall_radius(s, theta));
            }
        }
        if min_radius <= 0.0 {
            return Err("wall radius collapses".into());
        }
        let kappa = max_curvature(&self.centerline, t0, t1);
        if kappa > 0.0 && 1.0 / kappa <= 2.0 * self.max_radius() {
            return Err(format!(
                "radius of curvature {} below twice the max radius",
                1.0 / kappa
            ));
        }
        if !self.appearance.is_valid() {
            return Err("appearance out of range".into());
        }
        Ok(())
    }
}

/// Largest curvature over `[t0, t1]` by dense sampling.
pub fn max_curvature(line: &Centerline, t0: f64, t1: f64) -> f64 {
    let n = ((t1 - t0) / 5e-4).ceil() as usize;
    (0..=n)
        .map(|k| line.curvature(t0 + (t1 - t0) * k as f64 / n as f64))
        .fold(0.0, f64::max)
}

fn scene_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Builds a deterministic scene for `seed`.
pub fn build_scene(seed: u64, difficulty: Difficulty) -> ColonScene {
    if difficulty == Difficulty::Straight {
        let mut scene = ColonScene::cylinder(DEFAULT_RADIUS);
        scene.rng_seed = seed;
        return scene;
    }
    let mut rng = scene_rng(seed, 1);
    let randomized = difficulty == Difficulty::Randomized;

    let (r0, modulation, wavelength) = if randomized {
        (
            rng.random_range(0.011..0.014),
            rng.random_range(0.0..0.12),
            rng.random_range(0.06..0.15),
        )
    } else {
        (DEFAULT_RADIUS, 0.08, 0.1)
    };
    let radius_profile = RadiusProfile {
        r0,
        modulation,
        wavelength,
        phase: rng.random_range(0.0..TAU),
    };

    let mut ridges = if randomized {
        RidgeParams {
            amplitude: rng.random_range(0.0005..0.002),
            angular_frequency: rng.random_range(2..=4),
            axial_frequency: rng.random_range(15.0..30.0),
            angular_contrast: rng.random_range(0.0..0.4),
            angular_phase: rng.random_range(0.0..TAU),
        }
    } else {
        RidgeParams {
            amplitude: 0.0015,
            angular_frequency: 3,
            axial_frequency: 20.0,
            angular_contrast: 0.3,
            angular_phase: rng.random_range(0.0..TAU),
        }
    };
    ridges.amplitude = ridges.amplitude.min(0.5 * radius_profile.min());
    let (ax, ang) = ridges.slopes();
    let slope = radius_profile.max_slope() + ax + ang / (radius_profile.min() - ridges.amplitude);
    if slope > MAX_WALL_SLOPE {
        ridges.amplitude *= MAX_WALL_SLOPE / slope;
    }

    let (step, lateral) = if randomized {
        (0.06, 0.004)
    } else {
        (0.05, 0.003)
    };
    let n_knots = ((KNOT_T1 - KNOT_T0) / step).round() as usize + 1;
    let mut offsets: Vec<(f64, f64)> = (0..n_knots)
        .map(|k| {
            // The first two knots stay on the axis so sequences start centred.
            if k < 2 {
                (0.0, 0.0)
            } else {
                (
                    rng.random_range(-lateral..lateral),
                    rng.random_range(-lateral..lateral),
                )
            }
        })
        .collect();
    let max_r = radius_profile.max();
    let mut centerline = Centerline::new(KNOT_T0, step, &offsets);
    // Shrink the bends until the tube interior is locally disjoint with margin.
    while max_curvature(&centerline, KNOT_T0, KNOT_T1) * 2.5 * max_r >= 1.0 {
        for o in &mut offsets {
            o.0 *= 0.8;
            o.1 *= 0.8;
        }
        centerline = Centerline::new(KNOT_T0, step, &offsets);
    }

    let appearance = if randomized {
        AppearanceParams::sample(&mut scene_rng(seed, 2))
    } else {
        AppearanceParams {
            texture_seed: seed,
            ..AppearanceParams::default()
        }
    };
    ColonScene::new(
        centerline,
        radius_profile,
        ridges,
        appearance,
        seed,
        difficulty,
    )
}

/// Same geometry, freshly sampled appearance with a red-pink dominant albedo.
pub fn randomize_appearance(scene: &ColonScene, seed: u64) -> ColonScene {
    let mut out = scene.clone();
    out.appearance = AppearanceParams::sample(&mut scene_rng(seed, 3));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn straight_scene_is_the_default_cylinder() {
        let s = build_scene(0, Difficulty::Straight);
        assert_eq!(s.r0(), 0.0125);
        assert_eq!(s.ridge_params.amplitude, 0.0);
        assert_eq!(s.radius_profile.modulation, 0.0);
        assert_relative_eq!(s.lipschitz(), 1.02, epsilon = 1e-12);
    }

    #[test]
    fn cylinder_sdf_closed_form() {
        let s = ColonScene::cylinder(0.0125);
        assert_relative_eq!(
            s.sdf(&Vector3::new(0.0, 0.0, 0.05)),
            0.0125,
            epsilon = 1e-15
        );
        assert!(s.sdf(&Vector3::new(0.0125, 0.0, 0.2)).abs() < 1e-9);
        assert!(s.sdf(&Vector3::new(0.0, -0.0125, -0.3)).abs() < 1e-9);
        assert_relative_eq!(
            s.sdf(&Vector3::new(0.0, 0.02, 0.0)),
            -0.0075,
            epsilon = 1e-15
        );
    }

    #[test]
    fn builds_are_deterministic() {
        for d in [
            Difficulty::Straight,
            Difficulty::Curved,
            Difficulty::Randomized,
        ] {
            assert_eq!(build_scene(0, d), build_scene(0, d));
        }
        assert_ne!(
            build_scene(0, Difficulty::Randomized),
            build_scene(1, Difficulty::Randomized)
        );
    }

    #[test]
    fn curved_scene_satisfies_invariants() {
        let s = build_scene(1, Difficulty::Curved);
        let kappa = max_curvature(&s.centerline, KNOT_T0, KNOT_T1);
        assert!(kappa > 0.0);
        assert!(1.0 / kappa > 2.0 * s.max_radius());
        s.check_invariants(KNOT_T0, KNOT_T1).unwrap();
    }

    #[test]
    fn randomized_scenes_satisfy_invariants() {
        for seed in 0..12 {
            build_scene(seed, Difficulty::Randomized)
                .check_invariants(KNOT_T0, KNOT_T1)
                .unwrap();
        }
    }

    #[test]
    fn appearance_randomization_keeps_geometry() {
        let s = build_scene(3, Difficulty::Curved);
        let a = randomize_appearance(&s, 11);
        let b = randomize_appearance(&s, 11);
        assert_eq!(a.appearance, b.appearance);
        assert_eq!(a.geometry(), s.geometry());
        let alb = a.appearance.base_albedo;
        assert!(
            (0.5..=0.9).contains(&alb[0])
                && (0.1..=0.5).contains(&alb[1])
                && (0.1..=0.5).contains(&alb[2])
        );
    }

    #[test]
    fn four_variants_have_distinct_albedo() {
        let s = build_scene(5, Difficulty::Randomized);
        let variants: Vec<_> = (0..4).map(|k| randomize_appearance(&s, k)).collect();
        for (i, a) in variants.iter().enumerate() {
            assert_eq!(a.geometry(), s.geometry());
            for b in &variants[i + 1..] {
                assert_ne!(a.appearance.base_albedo, b.appearance.base_albedo);
            }
        }
    }

    #[test]
    fn eikonal_near_the_surface() {
        for (seed, difficulty) in [
            (0, Difficulty::Straight),
            (1, Difficulty::Curved),
            (4, Difficulty::Randomized),
        ] {
            let s = build_scene(seed, difficulty);
            for k in 0..200 {
                let t = 0.01 + k as f64 * 0.0021;
                let theta = k as f64 * 0.7;
                let on = s.surface_point(t, theta);
                let axis = s.centerline.position(s.centerline.nearest_param(&on));
                let inward = (axis - on).normalize();
                for off in [-0.0005, 0.0, 0.0005] {
                    let g = s.sdf_gradient(&(on + inward * off)).norm();
                    assert!((g - 1.0).abs() < 0.05, "seed {seed}: |grad| = {g}");
                }
            }
        }
    }
}
