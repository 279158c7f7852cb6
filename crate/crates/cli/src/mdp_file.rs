//! Plain-text (TOML) definition of a small finite MDP with its policies and
//! optional feature table.
//!
//! ```toml
//! gamma = 0.9
//! # transition[s][a] is the next-state distribution
//! transition = [[[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]]]
//! reward = [[0.0, 0.0], [0.0, 1.0]]
//! behavior = [[0.5, 0.5], [0.5, 0.5]]
//! target = [[0.0, 1.0], [0.0, 1.0]]
//! # optional: one row per (s, a) pair, ordered s-major; tabular when absent
//! features = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, 2.0]]
//! # optional
//! terminal = [false, false]
//! initial = [1.0, 0.0]
//! ```

use std::path::Path;

use gqlab::env::FiniteEnv;
use gqlab::features::FiniteFeatures;
use gqlab::mdp::{FiniteMdp, TabularPolicy};
use gqlab::DenseMatrix;
use serde::Deserialize;

use crate::error::ConfigError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpFile {
    pub gamma: f64,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
    pub behavior: Vec<Vec<f64>>,
    pub target: Vec<Vec<f64>>,
    #[serde(default)]
    pub features: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub terminal: Option<Vec<bool>>,
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
}

impl MdpFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read(path.to_path_buf(), e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn build(&self) -> Result<(FiniteEnv, FiniteFeatures), ConfigError> {
        let n_states = self.transition.len();
        let n_actions = self.transition.first().map_or(0, Vec::len);
        let ragged = |what: &str| ConfigError::Invalid(format!("{what} has the wrong shape"));
        let mut p = Vec::with_capacity(n_states * n_actions * n_states);
        for row in &self.transition {
            if row.len() != n_actions {
                return Err(ragged("transition"));
            }
            for dist in row {
                if dist.len() != n_states {
                    return Err(ragged("transition"));
                }
                p.extend_from_slice(dist);
            }
        }
        let flat = |table: &Vec<Vec<f64>>, what: &str| -> Result<Vec<f64>, ConfigError> {
            if table.len() != n_states || table.iter().any(|r| r.len() != n_actions) {
                return Err(ragged(what));
            }
            Ok(table.concat())
        };
        let mut mdp = FiniteMdp::new(n_states, n_actions, p, flat(&self.reward, "reward")?, self.gamma)?;
        if let Some(initial) = &self.initial {
            mdp = mdp.with_initial(initial.clone())?;
        }
        if let Some(terminal) = &self.terminal {
            mdp = mdp.with_terminal(terminal.clone())?;
        }
        let behavior = TabularPolicy::new(n_states, n_actions, flat(&self.behavior, "behavior")?)?;
        let target = TabularPolicy::new(n_states, n_actions, flat(&self.target, "target")?)?;
        let features = match &self.features {
            Some(rows) => FiniteFeatures::new(n_states, n_actions, DenseMatrix::from_rows(rows)?)?,
            None => FiniteFeatures::tabular(n_states, n_actions),
        };
        Ok((FiniteEnv::new("custom", mdp, behavior, target), features))
    }
}
