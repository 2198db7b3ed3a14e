//! JSON run files shared by the command line and the test suites.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gradcheck::GradCheckConfig;
use crate::model::ArchConfig;
use crate::train::synth::SynthTask;
use crate::train::trainer::TrainConfig;

/// Committed pilot run for the toy training target.
pub const PILOT_JSON: &str = include_str!("../fixtures/pilot.json");

/// Either a preset name or a full architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArchSpec {
    Preset(String),
    Config(ArchConfig),
}

impl ArchSpec {
    pub fn resolve(&self) -> Result<ArchConfig> {
        match self {
            ArchSpec::Preset(name) => ArchConfig::preset(name),
            ArchSpec::Config(cfg) => {
                cfg.validate()?;
                Ok(cfg.clone())
            }
        }
    }
}

/// Every section is optional; command-line flags override file values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub arch: Option<ArchSpec>,
    pub task: Option<SynthTask>,
    pub train: Option<TrainConfig>,
    pub gradcheck: Option<GradCheckConfig>,
    /// Training accuracy the run is expected to reach.
    pub min_train_acc: Option<f64>,
    /// Outcome recorded when the file was produced. Not read by any command.
    pub observed: Option<serde_json::Value>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn pilot() -> Self {
        Self::from_json(PILOT_JSON).expect("pilot fixture parses")
    }
}
