//! Samplable environments. Finite ones wrap a [`FiniteMdp`] together with the
//! behavior and target policies of the benchmark.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mdp::{FiniteMdp, TabularPolicy};

pub trait Environment: Send + Sync {
    type State: Clone + std::fmt::Debug + Send;

    fn n_actions(&self) -> usize;

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State;

    /// Samples `(next_state, reward)`. Depends only on the arguments.
    fn step<R: Rng + ?Sized>(&self, state: &Self::State, action: usize, rng: &mut R) -> (Self::State, f64);

    fn is_terminal(&self, state: &Self::State) -> bool;

    /// Hard cap on episode length, if any.
    fn episode_cap(&self) -> Option<usize> {
        None
    }
}

/// Draws an index from a discrete distribution.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

#[derive(Debug, Clone)]
pub struct FiniteEnv {
    name: &'static str,
    mdp: FiniteMdp,
    behavior: TabularPolicy,
    target: TabularPolicy,
}

impl FiniteEnv {
    pub fn new(name: &'static str, mdp: FiniteMdp, behavior: TabularPolicy, target: TabularPolicy) -> Self {
        Self { name, mdp, behavior, target }
    }

    /// Same environment with a different discount.
    pub fn with_gamma(self, gamma: f64) -> Result<Self> {
        Ok(Self { mdp: self.mdp.with_gamma(gamma)?, ..self })
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn mdp(&self) -> &FiniteMdp {
        &self.mdp
    }

    pub fn behavior(&self) -> &TabularPolicy {
        &self.behavior
    }

    pub fn target(&self) -> &TabularPolicy {
        &self.target
    }
}

impl Environment for FiniteEnv {
    type State = usize;

    fn n_actions(&self) -> usize {
        self.mdp.n_actions()
    }

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(self.mdp.initial_distribution(), rng)
    }

    fn step<R: Rng + ?Sized>(&self, state: &usize, action: usize, rng: &mut R) -> (usize, f64) {
        let next = sample_index(self.mdp.next_distribution(*state, action), rng);
        (next, self.mdp.reward(*state, action))
    }

    fn is_terminal(&self, state: &usize) -> bool {
        self.mdp.is_terminal(*state)
    }
}

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;
pub const DASHED: usize = 0;
pub const SOLID: usize = 1;

/// Two-state counterexample: `right` moves to the second state, `left` to
/// the first; zero rewards; target always right, behavior uniform.
pub fn counterexample_env() -> FiniteEnv {
    let mut p = vec![0.0; 8];
    for s in 0..2 {
        p[(s * 2 + LEFT) * 2] = 1.0;
        p[(s * 2 + RIGHT) * 2 + 1] = 1.0;
    }
    let mdp = FiniteMdp::new(2, 2, p, vec![0.0; 4], 0.99).expect("valid model");
    let behavior = TabularPolicy::uniform(2, 2);
    let target = TabularPolicy::deterministic(2, &[RIGHT, RIGHT]).expect("valid policy");
    FiniteEnv::new("counterexample", mdp, behavior, target)
}

/// Baird star: `dashed` jumps uniformly to one of the first six states,
/// `solid` to the seventh. Continuing, uniform start, γ = 0.99.
pub fn baird_star_env() -> FiniteEnv {
    let n = 7;
    let mut p = vec![0.0; n * 2 * n];
    for s in 0..n {
        for next in 0..6 {
            p[(s * 2 + DASHED) * n + next] = 1.0 / 6.0;
        }
        p[(s * 2 + SOLID) * n + 6] = 1.0;
    }
    let mdp = FiniteMdp::new(n, 2, p, vec![0.0; n * 2], 0.99).expect("valid model");
    let behavior = TabularPolicy::state_independent(n, &[6.0 / 7.0, 1.0 / 7.0]).expect("valid policy");
    let target = TabularPolicy::deterministic(2, &[SOLID; 7]).expect("valid policy");
    FiniteEnv::new("baird", mdp, behavior, target)
}

/// Boyan chain with the default discount.
pub fn boyan_chain_env() -> FiniteEnv {
    boyan_chain_with_gamma(0.99).expect("valid model")
}

/// 14 states, one action. State `i < 12` moves one or two steps ahead with
/// reward -3; state 12 moves to 13 with reward -2; state 13 is terminal.
pub fn boyan_chain_with_gamma(gamma: f64) -> Result<FiniteEnv> {
    let n = 14;
    let mut p = vec![0.0; n * n];
    let mut r = vec![0.0; n];
    for s in 0..12 {
        p[s * n + s + 1] = 0.5;
        p[s * n + s + 2] = 0.5;
        r[s] = -3.0;
    }
    p[12 * n + 13] = 1.0;
    r[12] = -2.0;
    p[13 * n + 13] = 1.0;
    let mut terminal = vec![false; n];
    terminal[13] = true;
    let mut initial = vec![0.0; n];
    initial[0] = 1.0;
    let mdp = FiniteMdp::new(n, 1, p, r, gamma)?.with_initial(initial)?.with_terminal(terminal)?;
    let only = TabularPolicy::uniform(n, 1);
    Ok(FiniteEnv::new("boyan", mdp, only.clone(), only))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MountainCarState {
    pub position: f64,
    pub velocity: f64,
}

impl MountainCarState {
    pub const POSITION_MIN: f64 = -1.2;
    pub const POSITION_MAX: f64 = 0.5;
    pub const VELOCITY_MIN: f64 = -0.07;
    pub const VELOCITY_MAX: f64 = 0.07;
    pub const GOAL: f64 = 0.5;

    pub fn in_bounds(&self) -> bool {
        (Self::POSITION_MIN..=Self::POSITION_MAX).contains(&self.position)
            && (Self::VELOCITY_MIN..=Self::VELOCITY_MAX).contains(&self.velocity)
    }
}

/// Mountain Car with actions `0, 1, 2` meaning throttle `-1, 0, +1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MountainCar;

impl MountainCar {
    pub const EPISODE_CAP: usize = 5000;

    pub fn throttle(action: usize) -> f64 {
        action as f64 - 1.0
    }
}

pub fn mountain_car_env() -> MountainCar {
    MountainCar
}

impl Environment for MountainCar {
    type State = MountainCarState;

    fn n_actions(&self) -> usize {
        3
    }

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> MountainCarState {
        MountainCarState { position: rng.random_range(-0.6..=-0.4), velocity: 0.0 }
    }

    fn step<R: Rng + ?Sized>(&self, state: &MountainCarState, action: usize, _rng: &mut R) -> (MountainCarState, f64) {
        let mut velocity = (state.velocity + 0.001 * Self::throttle(action) - 0.0025 * (3.0 * state.position).cos())
            .clamp(MountainCarState::VELOCITY_MIN, MountainCarState::VELOCITY_MAX);
        let position =
            (state.position + velocity).clamp(MountainCarState::POSITION_MIN, MountainCarState::POSITION_MAX);
        if position == MountainCarState::POSITION_MIN && velocity < 0.0 {
            velocity = 0.0;
        }
        (MountainCarState { position, velocity }, -1.0)
    }

    fn is_terminal(&self, state: &MountainCarState) -> bool {
        state.position >= MountainCarState::GOAL
    }

    fn episode_cap(&self) -> Option<usize> {
        Some(Self::EPISODE_CAP)
    }
}
