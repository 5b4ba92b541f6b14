use nalgebra::Vector3;

use super::surfel::SurfelMap;
use crate::geometry::{CameraIntrinsics, Pose};
use crate::image::{DepthMap, Image, RgbImage};

/// Surfels nearer than this (m) are not splatted.
const NEAR_PLANE: f64 = 1e-3;
/// Cap on a splat's half-width in pixels.
const MAX_SPLAT_RADIUS: f64 = 24.0;

/// A surfel that won at least one pixel, in the view's camera frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VisibleSurfel {
    /// Index into `SurfelMap::surfels`.
    pub map_index: usize,
    pub position: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub color: [f32; 3],
    pub color_weight: f32,
    pub confidence: f64,
}

/// The map rendered from one pose.
#[derive(Clone, Debug)]
pub struct ModelView {
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    pub depth: DepthMap,
    pub color: RgbImage,
    pub normal: Image<Option<Vector3<f64>>>,
    /// Index into `visible` of the surfel that won each pixel.
    pub index: Image<Option<u32>>,
    pub visible: Vec<VisibleSurfel>,
}

impl ModelView {
    pub fn surfel_at(&self, u: usize, v: usize) -> Option<&VisibleSurfel> {
        self.index.get(u, v).map(|i| &self.visible[i as usize])
    }

    pub fn valid_pixels(&self) -> usize {
        self.index.as_slice().iter().filter(|i| i.is_some()).count()
    }
}

/// Splats stable surfels as disks; the nearest disk along each ray wins.
pub fn predict_view(map: &SurfelMap, pose: &Pose, intr: &CameraIntrinsics) -> ModelView {
    predict_view_with(map, pose, intr, map.stability_threshold)
}

/// As [`predict_view`], splatting every surfel with at least `min_confidence`.
pub fn predict_view_with(
    map: &SurfelMap,
    pose: &Pose,
    intr: &CameraIntrinsics,
    min_confidence: f64,
) -> ModelView {
    let (w, h) = (intr.width, intr.height);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut owner: Vec<Option<usize>> = vec![None; w * h];
    let f = intr.fx.max(intr.fy);

    for (i, s) in map.surfels.iter().enumerate() {
        if s.confidence < min_confidence {
            continue;
        }
        let p = pose.transform_point(&s.position);
        let n = pose.transform_vector(&s.normal);
        if p.z < NEAR_PLANE || n.dot(&p) >= 0.0 {
            continue;
        }
        let Some((uc, vc)) = intr.project(&p) else {
            continue;
        };
        let reach = (f * s.radius / p.z).min(MAX_SPLAT_RADIUS) + 1.0;
        let u0 = (uc - reach).floor().max(0.0);
        let v0 = (vc - reach).floor().max(0.0);
        let u1 = (uc + reach).ceil().min((w - 1) as f64);
        let v1 = (vc + reach).ceil().min((h - 1) as f64);
        if u0 > u1 || v0 > v1 {
            continue;
        }
        let np = n.dot(&p);
        let r2 = s.radius * s.radius;
        for v in v0 as usize..=v1 as usize {
            for u in u0 as usize..=u1 as usize {
                let ray = intr.ray(u as f64, v as f64);
                let denom = n.dot(&ray);
                if denom >= 0.0 {
                    continue;
                }
                let depth = np / denom;
                if depth < NEAR_PLANE || (ray * depth - p).norm_squared() > r2 {
                    continue;
                }
                let k = v * w + u;
                if depth < zbuf[k] {
                    zbuf[k] = depth;
                    owner[k] = Some(i);
                }
            }
        }
    }

    let mut slot = vec![u32::MAX; map.surfels.len()];
    let mut visible = Vec::new();
    let index: Vec<Option<u32>> = owner
        .iter()
        .map(|o| {
            o.map(|i| {
                if slot[i] == u32::MAX {
                    slot[i] = visible.len() as u32;
                    let s = &map.surfels[i];
                    visible.push(VisibleSurfel {
                        map_index: i,
                        position: pose.transform_point(&s.position),
                        normal: pose.transform_vector(&s.normal),
                        color: s.color,
                        color_weight: s.color_weight,
                        confidence: s.confidence,
                    });
                }
                slot[i]
            })
        })
        .collect();

    let depth = zbuf
        .iter()
        .map(|z| if z.is_finite() { *z as f32 } else { 0.0 })
        .collect();
    let color = index
        .iter()
        .map(|i| i.map_or([0.0; 3], |i| visible[i as usize].color))
        .collect();
    let normal = index
        .iter()
        .map(|i| i.map(|i| visible[i as usize].normal))
        .collect();
    ModelView {
        pose: *pose,
        intrinsics: *intr,
        depth: Image::from_vec(w, h, depth),
        color: Image::from_vec(w, h, color),
        normal: Image::from_vec(w, h, normal),
        index: Image::from_vec(w, h, index),
        visible,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::Surfel;

    fn map_with(surfels: &[Surfel]) -> SurfelMap {
        let mut map = SurfelMap::new(0.0, 100);
        for s in surfels {
            map.push(*s);
        }
        map
    }

    #[test]
    fn single_surfel_on_axis() {
        let intr = CameraIntrinsics::default();
        let d = 0.05;
        let s = Surfel::new(
            Vector3::new(0.0, 0.0, d),
            -Vector3::z(),
            0.001,
            [0.5; 3],
            1.0,
            0,
        );
        let view = predict_view(&map_with(&[s]), &Pose::identity(), &intr);
        let (u, v) = (intr.cx as usize, intr.cy as usize);
        assert!((*view.depth.get(u, v) as f64 - d).abs() < 1e-7);
        assert_eq!(view.surfel_at(u, v).unwrap().map_index, 0);
        // Footprint: radius 1 mm at 5 cm is 3.2 px.
        assert_eq!(*view.depth.get(u + 4, v), 0.0);
        assert!(*view.depth.get(u + 3, v) > 0.0);
    }

    #[test]
    fn nearer_surfel_wins() {
        let intr = CameraIntrinsics::default();
        let far = Surfel::new(
            Vector3::new(0.0, 0.0, 0.08),
            -Vector3::z(),
            0.002,
            [0.1; 3],
            1.0,
            0,
        );
        let near = Surfel::new(
            Vector3::new(0.0, 0.0, 0.04),
            -Vector3::z(),
            0.001,
            [0.9; 3],
            1.0,
            0,
        );
        for order in [[far, near], [near, far]] {
            let view = predict_view(&map_with(&order), &Pose::identity(), &intr);
            let s = view.surfel_at(160, 120).unwrap();
            assert_eq!(s.color, [0.9; 3]);
        }
    }

    #[test]
    fn back_facing_and_unstable_skipped() {
        let intr = CameraIntrinsics::default();
        let away = Surfel::new(
            Vector3::new(0.0, 0.0, 0.05),
            Vector3::z(),
            0.001,
            [0.5; 3],
            5.0,
            0,
        );
        let weak = Surfel::new(
            Vector3::new(0.0, 0.0, 0.05),
            -Vector3::z(),
            0.001,
            [0.5; 3],
            0.5,
            0,
        );
        let mut map = map_with(&[away, weak]);
        map.stability_threshold = 1.0;
        assert_eq!(
            predict_view(&map, &Pose::identity(), &intr).valid_pixels(),
            0
        );
        assert!(predict_view_with(&map, &Pose::identity(), &intr, 0.0).valid_pixels() > 0);
    }
}
