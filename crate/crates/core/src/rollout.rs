//! Turns a finite environment plus feature table into a stream of
//! [`TransitionSample`]s generated by the behavior policy.

use rand::Rng;

use crate::env::{sample_index, Environment, FiniteEnv};
use crate::features::{expected_feature_tabular, FeatureMap, FiniteFeatures};
use crate::learners::{NextFeatures, TransitionSample};
use crate::linalg::DenseVector;

/// Behavior-policy trajectory over a finite environment. Episodes restart
/// from the initial distribution after a terminal transition.
#[derive(Debug, Clone)]
pub struct FiniteRollout<'a> {
    env: &'a FiniteEnv,
    pair_features: Vec<DenseVector>,
    expected: Vec<DenseVector>,
    state: usize,
    action: usize,
    /// `(state, action, reward, next_state)` of the last transition.
    last: Option<(usize, usize, f64, usize)>,
}

impl<'a> FiniteRollout<'a> {
    pub fn new<R: Rng + ?Sized>(
        env: &'a FiniteEnv,
        features: &FiniteFeatures,
        env_rng: &mut R,
        policy_rng: &mut R,
    ) -> Self {
        let mdp = env.mdp();
        let pair_features = (0..mdp.n_states())
            .flat_map(|s| (0..mdp.n_actions()).map(move |a| (s, a)))
            .map(|(s, a)| features.evaluate(&s, a))
            .collect();
        let expected = (0..mdp.n_states()).map(|s| expected_feature_tabular(features, env.target(), s)).collect();
        let state = env.reset(env_rng);
        let action = sample_index(env.behavior().row(state), policy_rng);
        Self { env, pair_features, expected, state, action, last: None }
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn action(&self) -> usize {
        self.action
    }

    pub fn last_transition(&self) -> Option<(usize, usize, f64, usize)> {
        self.last
    }

    /// Takes one behavior step and returns it as a sample.
    pub fn next_sample<R: Rng + ?Sized>(&mut self, env_rng: &mut R, policy_rng: &mut R) -> TransitionSample {
        let n_actions = self.env.mdp().n_actions();
        let (s, a) = (self.state, self.action);
        let (next_state, reward) = self.env.step(&s, a, env_rng);
        let phi = self.pair_features[s * n_actions + a].clone();
        self.last = Some((s, a, reward, next_state));
        if self.env.is_terminal(&next_state) {
            self.state = self.env.reset(env_rng);
            self.action = sample_index(self.env.behavior().row(self.state), policy_rng);
            return TransitionSample { phi, reward, next: None };
        }
        let next_action = sample_index(self.env.behavior().row(next_state), policy_rng);
        self.state = next_state;
        self.action = next_action;
        TransitionSample {
            phi,
            reward,
            next: Some(NextFeatures {
                sampled: Some(self.pair_features[next_state * n_actions + next_action].clone()),
                expected: self.expected[next_state].clone(),
            }),
        }
    }
}
