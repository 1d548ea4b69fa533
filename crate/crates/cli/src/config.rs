//! Experiment configuration files: strict JSON, one experiment per file.

use std::path::PathBuf;

use infogap_core::curvature::CurvatureSweepConfig;
use infogap_core::gap::{Encoding, GapSweepConfig};
use infogap_core::sgd::bridge::BridgeConfig;
use infogap_core::sgd::{FitOptions, LandscapeSpec, DEFAULT_MAX_STEPS};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvatureExperiment {
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    /// Seed of the random expert behind the entropy family.
    pub seed: u64,
    pub levels: usize,
    pub x_size: usize,
    pub y_size: usize,
    pub sweep: CurvatureSweepConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscapeSetting {
    pub landscape: LandscapeSpec,
    pub eta: f64,
    pub batch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscapeExperiment {
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub trials: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    pub settings: Vec<EscapeSetting>,
    #[serde(default)]
    pub fit: FitOptions,
}

fn default_max_steps() -> u64 {
    DEFAULT_MAX_STEPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapExperiment {
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    /// Seed of the goal split.
    pub seed: u64,
    pub width: usize,
    pub task_goals: usize,
    pub pretrain_goals: usize,
    #[serde(default = "default_encoding")]
    pub encoding: Encoding,
    pub sweep: GapSweepConfig,
}

fn default_encoding() -> Encoding {
    Encoding::Coordinate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeExperiment {
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub levels: usize,
    pub x_size: usize,
    pub y_size: usize,
    pub bridge: BridgeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum ExperimentConfig {
    CurvatureSweep(CurvatureExperiment),
    Escape(EscapeExperiment),
    GapSweep(GapExperiment),
    EscapeBridge(BridgeExperiment),
}

pub const COMMANDS: [&str; 4] = ["curvature_sweep", "escape", "gap_sweep", "escape_bridge"];

fn typed<T: DeserializeOwned>(value: serde_json::Value) -> Result<T, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        CliError::config(format!("invalid config at `{path}`: {}", e.inner()))
    })
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| CliError::config(format!("config is not valid JSON: {e}")))?;
        let obj = value
            .as_object_mut()
            .ok_or_else(|| CliError::config("config must be a JSON object"))?;
        let command = match obj.remove("command") {
            Some(serde_json::Value::String(c)) => c,
            Some(_) => return Err(CliError::config("invalid config at `command`: expected a string")),
            None => return Err(CliError::config("invalid config at `command`: missing field")),
        };
        match command.as_str() {
            "curvature_sweep" => Ok(Self::CurvatureSweep(typed(value)?)),
            "escape" => Ok(Self::Escape(typed(value)?)),
            "gap_sweep" => Ok(Self::GapSweep(typed(value)?)),
            "escape_bridge" => Ok(Self::EscapeBridge(typed(value)?)),
            other => Err(CliError::config(format!(
                "invalid config at `command`: unknown command `{other}`, expected one of {}",
                COMMANDS.join(", ")
            ))),
        }
    }

    pub fn command(&self) -> &'static str {
        match self {
            Self::CurvatureSweep(_) => "curvature_sweep",
            Self::Escape(_) => "escape",
            Self::GapSweep(_) => "gap_sweep",
            Self::EscapeBridge(_) => "escape_bridge",
        }
    }

    pub fn out(&self) -> Option<&PathBuf> {
        match self {
            Self::CurvatureSweep(c) => c.out.as_ref(),
            Self::Escape(c) => c.out.as_ref(),
            Self::GapSweep(c) => c.out.as_ref(),
            Self::EscapeBridge(c) => c.out.as_ref(),
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            Self::CurvatureSweep(c) => c.seed = seed,
            Self::Escape(c) => c.seed = seed,
            Self::GapSweep(c) => c.seed = seed,
            Self::EscapeBridge(c) => c.seed = seed,
        }
    }
}
