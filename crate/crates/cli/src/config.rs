//! Run configuration. Files hold a flat JSON object of dotted keys
//! (`"tracking.w_rgb": 0.1`); command-line flags override file values.

use std::path::Path;

use anyhow::{bail, Context, Result};
use endofusion::fusion::{IlluminationModel, PipelineConfig};
use endofusion::Difficulty;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    pub difficulty: Difficulty,
    /// Consecutive scene seeds starting at `seed`.
    pub count: usize,
    /// Appearance renderings per scene.
    pub variants: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub frames: usize,
    pub advance: f64,
    pub jitter_seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthConfig {
    pub source: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingSection {
    pub pyramid_levels: usize,
    pub max_iterations: usize,
    pub w_rgb: f64,
    pub huber_geometric: f64,
    pub huber_photometric: f64,
    pub min_inlier_fraction: f64,
    pub photometric: bool,
    pub illumination_compensation: bool,
    pub mask_threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionSection {
    pub stability_threshold: f64,
    pub max_surfels: usize,
    pub max_consecutive_failures: usize,
    /// Export unstable surfels to the PLY as well.
    pub export_all: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Depth metrics on per-frame normalised depth rather than meters.
    pub normalize: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub trajectory: TrajectoryConfig,
    pub depth: DepthConfig,
    pub tracking: TrackingSection,
    pub fusion: FusionSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            scene: SceneConfig {
                seed: 0,
                difficulty: Difficulty::Straight,
                count: 1,
                variants: 1,
            },
            trajectory: TrajectoryConfig {
                frames: 50,
                advance: 0.0005,
                jitter_seed: None,
            },
            depth: DepthConfig {
                source: "gt".into(),
            },
            tracking: TrackingSection {
                pyramid_levels: p.tracking.pyramid_levels,
                max_iterations: p.tracking.max_iterations,
                w_rgb: p.tracking.w_rgb,
                huber_geometric: p.tracking.huber_geometric,
                huber_photometric: p.tracking.huber_photometric,
                min_inlier_fraction: p.tracking.min_inlier_fraction,
                photometric: p.tracking.use_photometric,
                illumination_compensation: p.tracking.illumination.enabled,
                mask_threshold: p.tracking.mask_threshold,
            },
            fusion: FusionSection {
                stability_threshold: p.stability_threshold,
                max_surfels: p.max_surfels,
                max_consecutive_failures: p.max_consecutive_failures,
                export_all: false,
            },
            eval: EvalSection { normalize: true },
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let value: Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let Value::Object(entries) = value else {
            bail!(
                "config {} must be a JSON object of dotted keys",
                path.display()
            );
        };
        let mut config = Self::default();
        for (key, value) in entries {
            config
                .set(&key, value)
                .with_context(|| format!("in config {}", path.display()))?;
        }
        Ok(config)
    }

    /// Sets one dotted key, e.g. `set("tracking.w_rgb", 0.2.into())`.
    pub fn set(&mut self, key: &str, value: Value) -> Result<()> {
        let mut tree = serde_json::to_value(&*self)?;
        let mut node = &mut tree;
        for part in key.split('.') {
            node = match node {
                Value::Object(map) => map.get_mut(part),
                _ => None,
            }
            .with_context(|| format!("unknown config key `{key}`"))?;
        }
        if node.is_object() {
            bail!("config key `{key}` names a section, not a value");
        }
        *node = value;
        *self =
            serde_json::from_value(tree).with_context(|| format!("invalid value for `{key}`"))?;
        Ok(())
    }

    /// Parses `key=value`; the value is read as JSON when possible, else as a string.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (key, raw) = pair
            .split_once('=')
            .with_context(|| format!("expected key=value, got `{pair}`"))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        self.set(key.trim(), value)
    }

    /// Flattened `key -> value` view, the inverse of [`RunConfig::load`].
    pub fn to_flat(&self) -> serde_json::Map<String, Value> {
        fn walk(prefix: &str, v: &Value, out: &mut serde_json::Map<String, Value>) {
            match v {
                Value::Object(map) => {
                    for (k, v) in map {
                        let key = if prefix.is_empty() {
                            k.clone()
                        } else {
                            format!("{prefix}.{k}")
                        };
                        walk(&key, v, out);
                    }
                }
                other => {
                    out.insert(prefix.to_string(), other.clone());
                }
            }
        }
        let mut out = serde_json::Map::new();
        walk(
            "",
            &serde_json::to_value(self).expect("config serializes"),
            &mut out,
        );
        out
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.tracking;
        let checks: [(bool, &str); 13] = [
            (self.scene.count >= 1, "scene.count must be at least 1"),
            (
                self.scene.variants >= 1,
                "scene.variants must be at least 1",
            ),
            (
                self.trajectory.frames >= 1,
                "trajectory.frames must be at least 1",
            ),
            (
                (0.0..=0.01).contains(&self.trajectory.advance),
                "trajectory.advance must be within [0, 0.01] m",
            ),
            (
                (1..=5).contains(&t.pyramid_levels),
                "tracking.pyramid_levels must be within 1..=5",
            ),
            (
                t.max_iterations >= 1,
                "tracking.max_iterations must be at least 1",
            ),
            (t.w_rgb >= 0.0, "tracking.w_rgb must be non-negative"),
            (
                t.huber_geometric > 0.0,
                "tracking.huber_geometric must be positive",
            ),
            (
                t.huber_photometric > 0.0,
                "tracking.huber_photometric must be positive",
            ),
            (
                (0.0..=1.0).contains(&t.min_inlier_fraction),
                "tracking.min_inlier_fraction must be within [0, 1]",
            ),
            (
                (0.0..=1.0).contains(&t.mask_threshold),
                "tracking.mask_threshold must be within [0, 1]",
            ),
            (
                self.fusion.stability_threshold > 0.0,
                "fusion.stability_threshold must be positive",
            ),
            (
                self.fusion.max_consecutive_failures >= 1,
                "fusion.max_consecutive_failures must be at least 1",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                bail!("{msg}");
            }
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        let mut p = PipelineConfig::default();
        let t = &self.tracking;
        p.tracking.pyramid_levels = t.pyramid_levels;
        p.tracking.max_iterations = t.max_iterations;
        p.tracking.w_rgb = t.w_rgb;
        p.tracking.huber_geometric = t.huber_geometric;
        p.tracking.huber_photometric = t.huber_photometric;
        p.tracking.min_inlier_fraction = t.min_inlier_fraction;
        p.tracking.use_photometric = t.photometric;
        p.tracking.mask_threshold = t.mask_threshold;
        let illumination = IlluminationModel {
            enabled: t.illumination_compensation,
            ..IlluminationModel::default()
        };
        p.tracking.illumination = illumination;
        p.fusion.illumination = illumination;
        p.stability_threshold = self.fusion.stability_threshold;
        p.max_surfels = self.fusion.max_surfels;
        p.max_consecutive_failures = self.fusion.max_consecutive_failures;
        p
    }
}
