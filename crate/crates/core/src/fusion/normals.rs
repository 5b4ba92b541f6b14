use nalgebra::Vector3;

use crate::geometry::CameraIntrinsics;
use crate::image::{DepthMap, Image};

pub type NormalMap = Image<Option<Vector3<f64>>>;
pub type PointMap = Image<Option<Vector3<f64>>>;

/// Camera-frame points for every valid depth pixel.
pub fn back_project_depth(depth: &DepthMap, intr: &CameraIntrinsics) -> PointMap {
    Image::from_fn(depth.width(), depth.height(), |u, v| {
        let d = *depth.get(u, v) as f64;
        (d > 0.0).then(|| intr.unproject(u as f64, v as f64, d))
    })
}

/// Per-pixel normals from central differences, facing the camera. Pixels
/// without all four neighbours valid get `None`.
pub fn compute_normals(depth: &DepthMap, intr: &CameraIntrinsics) -> NormalMap {
    normals_from_points(&back_project_depth(depth, intr))
}

pub fn normals_from_points(points: &PointMap) -> NormalMap {
    let (w, h) = (points.width(), points.height());
    Image::from_fn(w, h, |u, v| {
        if u == 0 || v == 0 || u + 1 >= w || v + 1 >= h {
            return None;
        }
        let p = (*points.get(u, v))?;
        let right = (*points.get(u + 1, v))?;
        let left = (*points.get(u - 1, v))?;
        let down = (*points.get(u, v + 1))?;
        let up = (*points.get(u, v - 1))?;
        let n = (right - left).cross(&(down - up));
        let norm = n.norm();
        if norm.is_nan() || norm <= 0.0 {
            return None;
        }
        let n = n / norm;
        Some(if n.dot(&p) > 0.0 { -n } else { n })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fronto_parallel_plane() {
        let intr = CameraIntrinsics::default();
        let depth = Image::filled(intr.width, intr.height, 0.05f32);
        let normals = compute_normals(&depth, &intr);
        let mut count = 0;
        for n in normals.as_slice().iter().flatten() {
            assert!((n - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-6);
            count += 1;
        }
        assert_eq!(count, (intr.width - 2) * (intr.height - 2));
    }

    #[test]
    fn isolated_pixel_has_no_normal() {
        let intr = CameraIntrinsics::default();
        let mut depth = Image::filled(intr.width, intr.height, 0.0f32);
        depth.set(50, 60, 0.04);
        let normals = compute_normals(&depth, &intr);
        assert!(normals.as_slice().iter().all(Option::is_none));
    }

    #[test]
    fn tilted_plane_faces_camera() {
        let intr = CameraIntrinsics::default();
        // Plane z = 0.05 + 0.5 x.
        let depth = Image::from_fn(intr.width, intr.height, |u, _| {
            let a = (u as f64 - intr.cx) / intr.fx;
            (0.05 / (1.0 - 0.5 * a)) as f32
        });
        let normals = compute_normals(&depth, &intr);
        let expected = Vector3::new(0.5, 0.0, -1.0).normalize();
        let n = normals.get(100, 100).unwrap();
        assert!((n - expected).norm() < 1e-5, "{n:?}");
    }
}
