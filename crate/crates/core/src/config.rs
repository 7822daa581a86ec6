//! Experiment configuration (JSON).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::GdOptions;
use crate::priors::SingerParams;
use crate::sim::{experiment_presets, SimConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    #[serde(default = "default_singer_init")]
    pub singer_init: SingerParams,
    #[serde(default)]
    pub gd: GdOptions,
}

fn default_singer_init() -> SingerParams {
    SingerParams { alpha: 1.0, sigma2: 1.0 }
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { singer_init: default_singer_init(), gd: GdOptions::default() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateOptions {
    /// Position measurement variance; defaults to `sigma_pos²`.
    #[serde(default)]
    pub r_pos: Option<f64>,
    /// Acceleration measurement variance; defaults to `sigma_acc²`.
    #[serde(default)]
    pub r_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub sim: SimConfig,
    #[serde(default)]
    pub train: TrainOptions,
    #[serde(default)]
    pub estimate: EstimateOptions,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate().map_err(|e| match e {
            Error::Config(_) => e,
            other => Error::Config(format!("sim: {other}")),
        })?;
        self.train.singer_init.validate().map_err(|e| Error::Config(format!("train.singer_init: {e}")))?;
        if self.train.singer_init.alpha <= 0.0 {
            return Err(Error::Config("train.singer_init.alpha must be > 0".into()));
        }
        for (name, v) in [("estimate.r_pos", self.estimate.r_pos), ("estimate.r_acc", self.estimate.r_acc)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("{name} must be > 0, got {v}")));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn r_pos(&self) -> f64 {
        self.estimate.r_pos.unwrap_or(self.sim.sigma_pos.powi(2))
    }

    pub fn r_acc(&self) -> f64 {
        self.estimate.r_acc.unwrap_or(self.sim.sigma_acc.powi(2))
    }

    /// Named preset: `wnoj` or `singer`.
    pub fn preset(name: &str) -> Result<Self> {
        let (wnoj, singer) = experiment_presets();
        let sim = match name {
            "wnoj" => wnoj,
            "singer" => singer,
            other => return Err(Error::Config(format!("unknown experiment '{other}' (expected wnoj or singer)"))),
        };
        Ok(Self { name: name.to_string(), sim, train: TrainOptions::default(), estimate: EstimateOptions::default() })
    }
}
