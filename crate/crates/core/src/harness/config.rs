//! Experiment configuration, read from TOML.
//!
//! ```toml
//! version = 1
//! mode = "tabular"          # or "lowrank"
//! seeds = [0, 1, 2]
//! workers = 2
//!
//! [instance]
//! states = 5
//! actions = 3
//! horizon = 4
//! dim = 2                   # lowrank only
//! class_size = 4            # lowrank only
//! generator_seed = 7
//!
//! [algorithm]
//! epsilon = 0.1
//! delta = 0.1
//! tau = 0.5
//! kappa = 0.1
//! episode_cap = 5000        # iterations for lowrank
//!
//! [[planning]]
//! name = "mismatch"
//! cost = "random"           # or "exploration"
//! tau = 0.4
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SweetError};
use crate::format::FORMAT_VERSION;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Tabular,
    Lowrank,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_class_size")]
    pub class_size: usize,
    #[serde(default)]
    pub generator_seed: u64,
    /// Generate an all-zero exploration cost.
    #[serde(default)]
    pub zero_cost: bool,
}

fn default_dim() -> usize {
    2
}

fn default_class_size() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub epsilon: f64,
    pub delta: f64,
    pub tau: f64,
    pub kappa: f64,
    /// Practical cap: episodes (tabular) or iterations (low-rank).
    #[serde(default)]
    pub episode_cap: Option<usize>,
    #[serde(default = "one")]
    pub uncertainty_scale: f64,
    #[serde(default = "one")]
    pub beta3: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskCost {
    /// `c* = c`.
    Exploration,
    /// A fresh random normalized cost.
    Random,
}

/// Planning task `(r*, c*, τ*)`; `r*` is always a fresh random normalized
/// reward drawn per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanningTask {
    pub name: String,
    pub cost: TaskCost,
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub mode: Mode,
    pub seeds: Vec<u64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub output: Option<String>,
    pub instance: InstanceSpec,
    pub algorithm: AlgorithmSpec,
    #[serde(default)]
    pub planning: Vec<PlanningTask>,
    /// Random normalized utilities and random policies in the error-bound
    /// check.
    #[serde(default = "default_check_utilities")]
    pub check_utilities: usize,
    #[serde(default = "default_check_policies")]
    pub check_policies: usize,
}

fn default_workers() -> usize {
    1
}

fn default_check_utilities() -> usize {
    50
}

fn default_check_policies() -> usize {
    10
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|span| text[..span.start.min(text.len())].matches('\n').count() as u64 + 1)
                .unwrap_or(0);
            SweetError::Parse {
                path: origin.to_string(),
                line,
                message: e.message().to_string(),
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| SweetError::io(path, e))?;
        ExperimentConfig::parse(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| SweetError::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SweetError::Parameter(m));
        if self.version != FORMAT_VERSION {
            return bad(format!("config version {} (expected {FORMAT_VERSION})", self.version));
        }
        let a = &self.algorithm;
        if !(a.tau > 0.0 && a.tau <= 1.0) {
            return bad(format!("tau = {} outside (0, 1]", a.tau));
        }
        if !(a.kappa > 0.0 && a.kappa <= a.tau) {
            return bad(format!("kappa = {} outside (0, tau]", a.kappa));
        }
        if !(a.epsilon > 0.0 && a.epsilon < 1.0) || !(a.delta > 0.0 && a.delta < 1.0) {
            return bad("epsilon and delta must lie in (0, 1)".into());
        }
        let i = &self.instance;
        if i.states == 0 || i.actions == 0 || i.horizon == 0 || i.dim == 0 || i.class_size == 0 {
            return bad("instance sizes must be positive".into());
        }
        for t in &self.planning {
            if !(t.tau > 0.0 && t.tau <= 1.0) {
                return bad(format!("planning task `{}` has tau = {} outside (0, 1]", t.name, t.tau));
            }
        }
        if self.seeds.is_empty() {
            return bad("no seeds".into());
        }
        if self.workers == 0 {
            return bad("workers must be positive".into());
        }
        Ok(())
    }

    pub fn episode_cap(&self) -> usize {
        self.algorithm.episode_cap.unwrap_or(match self.mode {
            Mode::Tabular => 5000,
            Mode::Lowrank => 2000,
        })
    }
}
