use nalgebra::Vector3;

/// Oriented disk with colour and an observation count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Surfel {
    pub position: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub radius: f64,
    pub color: [f32; 3],
    pub confidence: f64,
    pub last_seen: usize,
    /// Observations folded into `color`; zero until an unmasked observation arrives.
    pub color_weight: f32,
}

impl Surfel {
    pub fn new(
        position: Vector3<f64>,
        normal: Vector3<f64>,
        radius: f64,
        color: [f32; 3],
        confidence: f64,
        last_seen: usize,
    ) -> Self {
        Self {
            position,
            normal: normal.normalize(),
            radius,
            color,
            confidence,
            last_seen,
            color_weight: 1.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position
            .iter()
            .chain(self.normal.iter())
            .all(|x| x.is_finite())
            && self.radius.is_finite()
            && self.confidence.is_finite()
            && self.color.iter().all(|c| c.is_finite())
    }

    pub fn is_well_formed(&self) -> bool {
        self.is_finite()
            && (self.normal.norm() - 1.0).abs() <= 1e-6
            && self.radius > 0.0
            && self.confidence >= 0.0
    }
}

/// The dense reconstruction.
#[derive(Clone, Debug, Default)]
pub struct SurfelMap {
    pub surfels: Vec<Surfel>,
    /// Surfels at or above this confidence are stable.
    pub stability_threshold: f64,
    pub max_surfels: usize,
}

impl SurfelMap {
    pub fn new(stability_threshold: f64, max_surfels: usize) -> Self {
        Self {
            surfels: Vec::new(),
            stability_threshold,
            max_surfels,
        }
    }

    pub fn len(&self) -> usize {
        self.surfels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfels.is_empty()
    }

    pub fn is_stable(&self, s: &Surfel) -> bool {
        s.confidence >= self.stability_threshold
    }

    pub fn stable(&self) -> impl Iterator<Item = &Surfel> {
        self.surfels.iter().filter(|s| self.is_stable(s))
    }

    /// Adds a surfel unless the map is full or the surfel is non-finite.
    pub fn push(&mut self, s: Surfel) -> bool {
        if self.surfels.len() >= self.max_surfels || !s.is_finite() {
            return false;
        }
        self.surfels.push(s);
        true
    }
}
