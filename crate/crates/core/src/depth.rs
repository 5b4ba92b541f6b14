//! Depth channel supplied to fusion.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset;
use crate::error::{Error, Result};
use crate::eval::depth_metrics;
use crate::image::{DepthMap, Image};

/// Corrupted depth never drops below this fraction of `scale_bias * gt`,
/// so a valid pixel stays valid however large the noise.
pub const MIN_DEPTH_FRACTION: f64 = 0.05;

/// Spatially smooth error imitating a CNN depth estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub multiplicative_sigma: f64,
    /// Meters.
    pub additive_sigma: f64,
    /// Half-width of the box filter applied to the noise fields, in pixels.
    pub smoothing_radius: usize,
    /// Global scale error, the unknown metric scale of monocular depth.
    pub scale_bias: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            multiplicative_sigma: 0.0,
            additive_sigma: 0.0,
            smoothing_radius: 8,
            scale_bias: 1.0,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.multiplicative_sigma >= 0.0
            && self.additive_sigma >= 0.0
            && self.scale_bias > 0.0
            && self.multiplicative_sigma.is_finite()
            && self.additive_sigma.is_finite()
            && self.scale_bias.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid noise model {self:?}"
            )))
        }
    }

    fn is_identity(&self) -> bool {
        self.multiplicative_sigma == 0.0 && self.additive_sigma == 0.0 && self.scale_bias == 1.0
    }

    /// `scale_bias * g * (1 + sm * Fm) + sa * Fa` on valid pixels, where the
    /// F are unit-variance box-filtered Gaussian fields drawn from
    /// `(seed, frame_index)`.
    pub fn corrupt(&self, frame_index: usize, gt: &DepthMap) -> DepthMap {
        if self.is_identity() {
            return gt.clone();
        }
        let fields = NoiseFields::draw(
            self.seed,
            frame_index,
            gt.width(),
            gt.height(),
            self.smoothing_radius,
        );
        fields.apply(self, gt)
    }
}

/// The two smooth unit-variance fields of one frame.
struct NoiseFields {
    multiplicative: Vec<f64>,
    additive: Vec<f64>,
}

impl NoiseFields {
    fn draw(seed: u64, frame_index: usize, w: usize, h: usize, radius: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(frame_index as u64);
        let white = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..w * h).map(|_| StandardNormal.sample(rng)).collect()
        };
        let m = white(&mut rng);
        let a = white(&mut rng);
        Self {
            multiplicative: box_filter_unit_variance(&m, w, h, radius),
            additive: box_filter_unit_variance(&a, w, h, radius),
        }
    }

    fn apply(&self, model: &NoiseModel, gt: &DepthMap) -> DepthMap {
        let data = gt
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, &g)| {
                if g <= 0.0 {
                    return g;
                }
                let base = model.scale_bias * g as f64;
                let d = base * (1.0 + model.multiplicative_sigma * self.multiplicative[i])
                    + model.additive_sigma * self.additive[i];
                d.max(MIN_DEPTH_FRACTION * base) as f32
            })
            .collect();
        Image::from_vec(gt.width(), gt.height(), data)
    }
}

/// Box mean over a `(2r+1)^2` window clipped to the image, rescaled by the
/// square root of the window size so every pixel stays N(0, 1).
fn box_filter_unit_variance(x: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    // Summed-area table with a zero border row and column.
    let mut sat = vec![0.0; (w + 1) * (h + 1)];
    for v in 0..h {
        let mut row = 0.0;
        for u in 0..w {
            row += x[v * w + u];
            sat[(v + 1) * (w + 1) + u + 1] = sat[v * (w + 1) + u + 1] + row;
        }
    }
    let mut out = vec![0.0; w * h];
    for v in 0..h {
        let (v0, v1) = (v.saturating_sub(r), (v + r + 1).min(h));
        for u in 0..w {
            let (u0, u1) = (u.saturating_sub(r), (u + r + 1).min(w));
            let sum = sat[v1 * (w + 1) + u1] - sat[v0 * (w + 1) + u1] - sat[v1 * (w + 1) + u0]
                + sat[v0 * (w + 1) + u0];
            let n = ((v1 - v0) * (u1 - u0)) as f64;
            out[v * w + u] = sum / n.sqrt();
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub enum DepthSource {
    GroundTruth,
    Corrupted(NoiseModel),
    /// Directory holding `depth/%06d.dpt` (or the files directly).
    External(PathBuf),
}

impl DepthSource {
    pub fn provide(&self, frame_index: usize, gt: &DepthMap) -> Result<DepthMap> {
        provide_depth(self, frame_index, gt)
    }
}

pub fn provide_depth(source: &DepthSource, frame_index: usize, gt: &DepthMap) -> Result<DepthMap> {
    match source {
        DepthSource::GroundTruth => Ok(gt.clone()),
        DepthSource::Corrupted(model) => {
            model.validate()?;
            Ok(model.corrupt(frame_index, gt))
        }
        DepthSource::External(dir) => load_external(dir, frame_index, gt.width(), gt.height()),
    }
}

/// Path of an external prediction, preferring the `depth/` subdirectory.
pub fn external_depth_path(dir: &Path, frame_index: usize) -> PathBuf {
    let nested = dataset::depth_path(dir, frame_index);
    if nested.exists() {
        return nested;
    }
    let flat = dir.join(format!("{frame_index:06}.dpt"));
    if flat.exists() {
        flat
    } else {
        nested
    }
}

fn load_external(dir: &Path, frame_index: usize, width: usize, height: usize) -> Result<DepthMap> {
    let path = external_depth_path(dir, frame_index);
    let fail = |reason: String| Error::Depth {
        frame_index,
        reason,
    };
    let depth = dataset::read_depth(&path).map_err(|e| fail(e.to_string()))?;
    if depth.width() != width || depth.height() != height {
        return Err(fail(format!(
            "{} is {}x{}, expected {width}x{height}",
            path.display(),
            depth.width(),
            depth.height()
        )));
    }
    if depth.as_slice().iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(fail(format!(
            "{} holds negative or non-finite depth",
            path.display()
        )));
    }
    Ok(depth)
}

/// Mean over frames of the normalized-depth RMS between `model`'s output and
/// the ground truth. Frame `i` of `sequence` is corrupted as frame index `i`.
pub fn noise_rms(model: &NoiseModel, sequence: &[DepthMap]) -> Result<f64> {
    let mut sum = 0.0;
    for (i, gt) in sequence.iter().enumerate() {
        sum += depth_metrics(&model.corrupt(i, gt), gt, true)?.rms;
    }
    Ok(sum / sequence.len().max(1) as f64)
}

/// Relative tolerance at which bisection stops.
const CALIBRATION_TOLERANCE: f64 = 1e-3;
const MAX_MULTIPLICATIVE_SIGMA: f64 = 8.0;

/// Fits `multiplicative_sigma` of the default model so that [`noise_rms`] hits `target_rms`.
pub fn calibrate_noise(target_rms: f64, sequence: &[DepthMap]) -> Result<NoiseModel> {
    calibrate_noise_from(NoiseModel::default(), target_rms, sequence)
}

/// Bisection over `multiplicative_sigma`, other fields taken from `base`.
pub fn calibrate_noise_from(
    base: NoiseModel,
    target_rms: f64,
    sequence: &[DepthMap],
) -> Result<NoiseModel> {
    if target_rms <= 0.0 || !target_rms.is_finite() {
        return Err(Error::Calibration(format!(
            "target rms must be positive, got {target_rms}"
        )));
    }
    if sequence.is_empty() {
        return Err(Error::Calibration("empty sequence".to_string()));
    }
    base.validate()?;
    // The fields do not depend on sigma, so draw them once.
    let fields: Vec<NoiseFields> = sequence
        .iter()
        .enumerate()
        .map(|(i, gt)| {
            NoiseFields::draw(base.seed, i, gt.width(), gt.height(), base.smoothing_radius)
        })
        .collect();
    let rms_at = |sigma: f64| -> Result<f64> {
        let model = NoiseModel {
            multiplicative_sigma: sigma,
            ..base
        };
        let mut sum = 0.0;
        for (f, gt) in fields.iter().zip(sequence) {
            sum += depth_metrics(&f.apply(&model, gt), gt, true)?.rms;
        }
        Ok(sum / sequence.len() as f64)
    };

    let floor = rms_at(0.0)?;
    if floor >= target_rms * (1.0 + CALIBRATION_TOLERANCE) {
        return Err(Error::Calibration(format!(
            "rms is already {floor:.4} without multiplicative noise, above target {target_rms}"
        )));
    }
    let (mut lo, mut hi) = (0.0, 0.05);
    while rms_at(hi)? < target_rms {
        lo = hi;
        hi *= 2.0;
        if hi > MAX_MULTIPLICATIVE_SIGMA {
            return Err(Error::Calibration(format!(
                "target {target_rms} not reached with multiplicative sigma up to {MAX_MULTIPLICATIVE_SIGMA}"
            )));
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let rms = rms_at(mid)?;
        if (rms - target_rms).abs() <= CALIBRATION_TOLERANCE * target_rms {
            lo = mid;
            hi = mid;
            break;
        }
        if rms < target_rms {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(NoiseModel {
        multiplicative_sigma: 0.5 * (lo + hi),
        ..base
    })
}
