use nalgebra::Vector3;

use crate::scene::DEFAULT_LIGHT_POWER;

/// Undoes the co-located light's inverse-square and cosine fall-off, so a
/// diffuse surface point has the same intensity from every viewpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IlluminationModel {
    pub enabled: bool,
    pub light_power: f64,
    /// Grazing observations below this incidence cosine are unusable.
    pub min_cos: f64,
    /// Channels at or above this value are treated as clipped.
    pub saturation: f32,
}

impl Default for IlluminationModel {
    fn default() -> Self {
        Self {
            enabled: true,
            light_power: DEFAULT_LIGHT_POWER,
            min_cos: 0.15,
            saturation: 0.995,
        }
    }
}

impl IlluminationModel {
    /// Raw-to-albedo factor for a camera-frame point and normal.
    pub fn gain(&self, p: &Vector3<f64>, n: &Vector3<f64>) -> Option<f64> {
        let d = p.norm();
        let cos = -n.dot(p) / d;
        if cos.is_nan() || cos < self.min_cos {
            return None;
        }
        if !self.enabled {
            return Some(1.0);
        }
        Some(d * d / (self.light_power * cos))
    }

    pub fn compensate(
        &self,
        rgb: [f32; 3],
        p: &Vector3<f64>,
        n: &Vector3<f64>,
    ) -> Option<[f32; 3]> {
        if rgb.iter().any(|c| *c >= self.saturation) {
            return None;
        }
        let g = self.gain(p, n)?;
        Some(rgb.map(|c| (c as f64 * g) as f32))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{shade, AppearanceParams, PointLight};

    #[test]
    fn recovers_albedo_from_diffuse_shading() {
        let app = AppearanceParams {
            specular_strength: 0.0,
            texture_octaves: 0,
            ..AppearanceParams::default()
        };
        let model = IlluminationModel::default();
        let light = PointLight {
            position: Vector3::zeros(),
            power: model.light_power,
        };
        let p = Vector3::new(0.004, -0.003, 0.02);
        let n = Vector3::new(-0.3, 0.2, -1.0).normalize();
        let rgb = shade(&p, &n, &(-p).normalize(), &light, &app)
            .total()
            .map(|c| c as f32);
        let albedo = model.compensate(rgb, &p, &n).unwrap();
        let expected = app.albedo(&p);
        for k in 0..3 {
            assert!((albedo[k] as f64 - expected[k]).abs() < 1e-5);
        }
    }

    #[test]
    fn grazing_and_clipped_rejected() {
        let model = IlluminationModel::default();
        let p = Vector3::new(0.0, 0.0, 0.02);
        assert!(model.gain(&p, &Vector3::new(1.0, 0.0, 0.0)).is_none());
        assert!(model
            .compensate([1.0, 0.2, 0.2], &p, &Vector3::new(0.0, 0.0, -1.0))
            .is_none());
    }
}
