//! Experiment configuration (TOML) and its up-front validation.

use std::path::{Path, PathBuf};

use gqlab::learners::{SigmaSchedule, StepSizes};
use serde::Deserialize;

use crate::error::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentKind {
    Counterexample,
    Baird,
    Boyan,
    MountainCar,
    /// Finite MDP loaded from `mdp_file`.
    Custom,
}

impl EnvironmentKind {
    pub fn is_finite(self) -> bool {
        !matches!(self, EnvironmentKind::MountainCar)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Gq,
    SemiGradient,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureSpec {
    /// The environment's own basis (or the file's table, or tabular).
    #[default]
    Default,
    Tabular,
    TileCoding {
        #[serde(default = "default_tilings")]
        n_tilings: usize,
        #[serde(default = "default_tiles")]
        tiles_per_dim: usize,
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_tilings() -> usize {
    8
}
fn default_tiles() -> usize {
    8
}
fn default_threshold() -> f64 {
    gqlab::evaluation::DIVERGENCE_THRESHOLD
}
fn default_epsilon() -> f64 {
    0.1
}
fn default_sigma_period() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub environment: EnvironmentKind,
    #[serde(default)]
    pub mdp_file: Option<PathBuf>,
    pub learner: LearnerKind,
    #[serde(default)]
    pub features: FeatureSpec,
    /// Overrides the environment's discount when set.
    #[serde(default)]
    pub gamma: Option<f64>,
    pub lambda: f64,
    pub sigma: Vec<SigmaSchedule>,
    pub step_sizes: Vec<StepSizes>,
    pub n_runs: usize,
    /// Step budget for finite environments.
    #[serde(default)]
    pub n_steps: Option<u64>,
    /// Episode budget for Mountain Car.
    #[serde(default)]
    pub n_episodes: Option<u64>,
    #[serde(default)]
    pub seed_base: u64,
    /// Steps between records (finite environments; control records every episode).
    #[serde(default)]
    pub cadence: Option<u64>,
    pub output: PathBuf,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    /// Also track sample moments and report the empirical MSPBE.
    #[serde(default)]
    pub empirical_mspbe: bool,
    /// Ridge added to the sample `M` before inversion.
    #[serde(default)]
    pub ridge: Option<f64>,
    #[serde(default = "default_threshold")]
    pub divergence_threshold: f64,
    /// Exploration rate of the ε-greedy behavior policy (control only).
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Steps per dynamic-σ level on continuing tasks.
    #[serde(default = "default_sigma_period")]
    pub sigma_period: u64,
}

impl ExperimentConfig {
    /// Reads and validates a config; relative paths resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read(path.to_path_buf(), e))?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if self.output.is_relative() {
            self.output = base.join(&self.output);
        }
        if let Some(file) = &self.mdp_file {
            if file.is_relative() {
                self.mdp_file = Some(base.join(file));
            }
        }
    }

    pub fn cadence(&self) -> u64 {
        self.cadence.unwrap_or(100)
    }

    /// Structural checks that need no model construction.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if let Some(g) = self.gamma {
            if !(0.0..=1.0).contains(&g) {
                return bad(format!("gamma {g} outside [0,1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0,1]", self.lambda));
        }
        if self.n_runs == 0 {
            return bad("n_runs must be at least 1".into());
        }
        if self.sigma.is_empty() || self.step_sizes.is_empty() {
            return bad("sigma and step_sizes each need at least one entry".into());
        }
        for s in &self.sigma {
            s.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        for s in &self.step_sizes {
            s.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if self.cadence == Some(0) || self.sigma_period == 0 {
            return bad("cadence and sigma_period must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon {} outside [0,1]", self.epsilon));
        }
        if self.divergence_threshold.is_nan() || self.divergence_threshold <= 0.0 {
            return bad("divergence_threshold must be positive".into());
        }
        if let Some(r) = self.ridge {
            if !(r >= 0.0 && r.is_finite()) {
                return bad(format!("ridge {r} must be a non-negative number"));
            }
        }
        match self.environment {
            EnvironmentKind::MountainCar => {
                if self.n_episodes.unwrap_or(0) == 0 {
                    return bad("mountain_car needs n_episodes >= 1".into());
                }
                if !matches!(self.features, FeatureSpec::TileCoding { .. }) {
                    return bad("mountain_car needs features.kind = \"tile_coding\"".into());
                }
                if self.empirical_mspbe {
                    return bad("empirical_mspbe is only available on finite environments".into());
                }
            }
            kind => {
                if self.n_steps.unwrap_or(0) == 0 {
                    return bad("finite environments need n_steps >= 1".into());
                }
                if matches!(self.features, FeatureSpec::TileCoding { .. }) {
                    return bad("tile coding applies to mountain_car only".into());
                }
                if (kind == EnvironmentKind::Custom) != self.mdp_file.is_some() {
                    return bad("mdp_file is required for (and only for) environment = \"custom\"".into());
                }
            }
        }
        let mut labels = std::collections::HashSet::new();
        for s in &self.sigma {
            for z in &self.step_sizes {
                if !labels.insert(crate::runner::config_key(s, z)) {
                    return bad(format!("duplicate configuration {}", crate::runner::config_key(s, z)));
                }
            }
        }
        Ok(())
    }
}
