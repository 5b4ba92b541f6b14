//! `--depth` values: `gt`, `corrupted:rms=X`, `corrupted:sigma=X`, `external:DIR`.
//! Corrupted specs take optional `,seed=N`, `,bias=B`, `,radius=R` and
//! `,additive=A` (meters) suffixes.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use endofusion::depth::calibrate_noise_from;
use endofusion::{DepthMap, DepthSource, NoiseModel};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq)]
pub enum DepthSpec {
    GroundTruth,
    /// Noise calibrated to a normalised rms target.
    TargetRms {
        rms: f64,
        base: NoiseModel,
    },
    Fixed(NoiseModel),
    External(PathBuf),
}

/// The depth source actually used by a run, as recorded in `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ResolvedDepth {
    Gt,
    Corrupted {
        noise: NoiseModel,
        target_rms: Option<f64>,
    },
    External {
        dir: PathBuf,
    },
}

impl ResolvedDepth {
    pub fn source(&self) -> DepthSource {
        match self {
            Self::Gt => DepthSource::GroundTruth,
            Self::Corrupted { noise, .. } => DepthSource::Corrupted(*noise),
            Self::External { dir } => DepthSource::External(dir.clone()),
        }
    }
}

impl std::str::FromStr for DepthSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "gt" {
            return Ok(Self::GroundTruth);
        }
        if let Some(dir) = s.strip_prefix("external:") {
            if dir.is_empty() {
                bail!("external depth needs a directory: external:DIR");
            }
            return Ok(Self::External(PathBuf::from(dir)));
        }
        let Some(params) = s.strip_prefix("corrupted:") else {
            bail!("unknown depth source `{s}` (expected gt, corrupted:rms=X, corrupted:sigma=X or external:DIR)");
        };
        let mut base = NoiseModel::default();
        let mut rms = None;
        let mut sigma = None;
        for kv in params.split(',') {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("expected key=value in `{kv}`"))?;
            let num = || {
                v.parse::<f64>()
                    .with_context(|| format!("`{k}` needs a number, got `{v}`"))
            };
            match k {
                "rms" => rms = Some(num()?),
                "sigma" => sigma = Some(num()?),
                "additive" => base.additive_sigma = num()?,
                "bias" => base.scale_bias = num()?,
                "seed" => {
                    base.seed = v
                        .parse()
                        .with_context(|| format!("`seed` needs an integer, got `{v}`"))?
                }
                "radius" => {
                    base.smoothing_radius = v
                        .parse()
                        .with_context(|| format!("`radius` needs an integer, got `{v}`"))?
                }
                other => bail!("unknown corrupted-depth parameter `{other}`"),
            }
        }
        match (rms, sigma) {
            (Some(_), Some(_)) => bail!("give either rms= or sigma=, not both"),
            (Some(rms), None) => {
                if !(rms > 0.0 && rms.is_finite()) {
                    bail!("rms target must be positive, got {rms}");
                }
                Ok(Self::TargetRms { rms, base })
            }
            (None, sigma) => {
                base.multiplicative_sigma = sigma.unwrap_or(0.0);
                base.validate()?;
                Ok(Self::Fixed(base))
            }
        }
    }
}

impl DepthSpec {
    /// Fixes the noise parameters; rms targets are calibrated on `gt`.
    pub fn resolve(&self, gt: &[DepthMap]) -> Result<ResolvedDepth> {
        Ok(match self {
            Self::GroundTruth => ResolvedDepth::Gt,
            Self::Fixed(noise) => ResolvedDepth::Corrupted {
                noise: *noise,
                target_rms: None,
            },
            Self::TargetRms { rms, base } => ResolvedDepth::Corrupted {
                noise: calibrate_noise_from(*base, *rms, gt).context("calibrating depth noise")?,
                target_rms: Some(*rms),
            },
            Self::External(dir) => {
                if !dir.is_dir() {
                    bail!("external depth directory {} does not exist", dir.display());
                }
                ResolvedDepth::External { dir: dir.clone() }
            }
        })
    }
}
