//! Expands a config into runs, executes them on a worker pool and collects
//! per-run records in a deterministic order.

use std::collections::HashMap;
use std::time::Instant;

use gqlab::env::{mountain_car_env, Environment, FiniteEnv, MountainCar, MountainCarState};
use gqlab::evaluation::{divergence_monitor, DivergenceStatus, EmpiricalMoments};
use gqlab::features::{
    baird_features, boyan_features, counterexample_features, FeatureMap, FiniteFeatures, TileCoding,
};
use gqlab::learners::{
    gq_step, semi_gradient_step, update_trace, LearnerState, NextFeatures, SigmaSchedule, StepParams, StepSizes,
    TransitionSample,
};
use gqlab::mdp::ModelOracle;
use gqlab::rollout::FiniteRollout;
use gqlab::{env, DenseVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{EnvironmentKind, ExperimentConfig, FeatureSpec, LearnerKind};
use crate::error::{ConfigError, RunError};
use crate::mdp_file::MdpFile;

/// Worker-count override.
pub const WORKERS_ENV: &str = "GQLAB_WORKERS";

/// θ is written out in full only up to this dimension.
const MAX_LOGGED_THETA: usize = 16;

/// Stream ids of the three per-run generators.
const ENV_STREAM: u64 = 0;
const POLICY_STREAM: u64 = 1;
const SIGMA_STREAM: u64 = 2;

pub fn config_key(sigma: &SigmaSchedule, steps: &StepSizes) -> String {
    format!("sigma-{}__{}", sigma.label(), steps.label())
}

/// One row of a per-run CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub run: usize,
    pub seed: u64,
    pub sigma_schedule: String,
    pub step_sizes: String,
    pub episode: u64,
    pub step: u64,
    pub sigma: f64,
    pub mspbe: f64,
    pub empirical_mspbe: f64,
    pub episode_return: f64,
    pub episode_length: f64,
    pub theta_norm: f64,
    pub omega_norm: f64,
    pub diverged: bool,
    /// `;`-joined θ entries, empty when θ is too long to log.
    pub theta: String,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub key_index: usize,
    pub key: String,
    pub run: usize,
    pub seed: u64,
    pub records: Vec<Record>,
    pub diverged_at: Option<u64>,
    pub wall_ms: u128,
}

enum Problem {
    Finite { env: Box<FiniteEnv>, features: FiniteFeatures },
    Control { env: MountainCar, features: TileCoding },
}

/// A validated config with its models built.
pub struct Prepared {
    config: ExperimentConfig,
    problem: Problem,
    gamma: f64,
    dim: usize,
    theta0: DenseVector,
    keys: Vec<(SigmaSchedule, StepSizes)>,
}

impl Prepared {
    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn keys(&self) -> &[(SigmaSchedule, StepSizes)] {
        &self.keys
    }

    pub fn is_control(&self) -> bool {
        matches!(self.problem, Problem::Control { .. })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Builds every model the runs need; any failure is a config error.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared, ConfigError> {
    config.validate()?;
    let (problem, gamma) = match config.environment {
        EnvironmentKind::MountainCar => {
            let FeatureSpec::TileCoding { n_tilings, tiles_per_dim, dim, seed } = config.features else {
                return Err(ConfigError::Invalid("mountain_car needs tile coding".into()));
            };
            let features = TileCoding::new(n_tilings, tiles_per_dim, dim, seed)?;
            (Problem::Control { env: mountain_car_env(), features }, config.gamma.unwrap_or(0.99))
        }
        kind => {
            let (mut fenv, default_features) = match kind {
                EnvironmentKind::Counterexample => (env::counterexample_env(), counterexample_features()),
                EnvironmentKind::Baird => (env::baird_star_env(), baird_features()),
                EnvironmentKind::Boyan => (env::boyan_chain_env(), boyan_features()),
                _ => {
                    let path = config.mdp_file.as_ref().expect("validated");
                    MdpFile::load(path)?.build()?
                }
            };
            if let Some(g) = config.gamma {
                fenv = fenv.with_gamma(g)?;
            }
            let features = match config.features {
                FeatureSpec::Tabular => FiniteFeatures::tabular(fenv.mdp().n_states(), fenv.mdp().n_actions()),
                _ => default_features,
            };
            let gamma = fenv.mdp().gamma();
            // exercises the stationary distribution and resolvent up front
            ModelOracle::new(
                fenv.mdp().clone(),
                fenv.target().clone(),
                fenv.behavior().clone(),
                features.full_matrix().clone(),
                0.5,
                config.lambda,
            )?;
            (Problem::Finite { env: Box::new(fenv), features }, gamma)
        }
    };
    let dim = match &problem {
        Problem::Finite { features, .. } => features.dim(),
        Problem::Control { features, .. } => features.dim(),
    };
    let theta0 = match &config.theta0 {
        Some(t) if t.len() != dim => {
            return Err(ConfigError::Invalid(format!("theta0 has {} entries, features have {dim}", t.len())));
        }
        Some(t) => DenseVector::new(t.clone())?,
        None => DenseVector::zeros(dim),
    };
    let keys = config.sigma.iter().flat_map(|s| config.step_sizes.iter().map(move |z| (*s, *z))).collect();
    Ok(Prepared { config: config.clone(), problem, gamma, dim, theta0, keys })
}

/// Worker count from the environment, falling back to rayon's default.
pub fn worker_count() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0)
}

/// Executes every (configuration, run) pair on `workers` threads (rayon's
/// default when `None`). The result is ordered by configuration index, then
/// run index, whatever the worker count.
pub fn execute(prepared: &Prepared, workers: Option<usize>) -> Result<Vec<RunOutput>, RunError> {
    let jobs: Vec<(usize, usize)> =
        (0..prepared.keys.len()).flat_map(|k| (0..prepared.config.n_runs).map(move |r| (k, r))).collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| RunError::Malformed("<worker pool>".into(), e.to_string()))?;
    let mut outputs =
        pool.install(|| jobs.par_iter().map(|&(k, r)| run_one(prepared, k, r)).collect::<Result<Vec<_>, RunError>>())?;
    outputs.sort_by_key(|o| (o.key_index, o.run));
    Ok(outputs)
}

fn streams(seed: u64) -> [ChaCha8Rng; 3] {
    [ENV_STREAM, POLICY_STREAM, SIGMA_STREAM].map(|id| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id);
        rng
    })
}

fn run_one(prepared: &Prepared, key_index: usize, run: usize) -> Result<RunOutput, RunError> {
    let started = Instant::now();
    let (schedule, steps) = prepared.keys[key_index];
    let seed = prepared.config.seed_base + run as u64;
    let ctx = RunContext { prepared, schedule, steps, run, seed, key: (schedule.label(), steps.label()) };
    let (records, diverged_at) = match &prepared.problem {
        Problem::Finite { env, features } => ctx.finite(env, features)?,
        Problem::Control { env, features } => ctx.control(env, features)?,
    };
    Ok(RunOutput {
        key_index,
        key: config_key(&schedule, &steps),
        run,
        seed,
        records,
        diverged_at,
        wall_ms: started.elapsed().as_millis(),
    })
}

struct RunContext<'a> {
    prepared: &'a Prepared,
    schedule: SigmaSchedule,
    steps: StepSizes,
    run: usize,
    seed: u64,
    key: (String, String),
}

struct Snapshot {
    episode: u64,
    step: u64,
    sigma: f64,
    mspbe: f64,
    empirical_mspbe: f64,
    episode_return: f64,
    episode_length: f64,
    diverged: bool,
}

impl RunContext<'_> {
    fn params(&self, k: u64, sigma: f64) -> StepParams {
        let (alpha, beta) = self.steps.at(k);
        StepParams { gamma: self.prepared.gamma, lambda: self.prepared.config.lambda, sigma, alpha, beta }
    }

    /// Applies the configured learner; `false` when the update left θ or ω
    /// non-finite.
    fn learn(
        &self,
        state: &mut LearnerState,
        sample: &TransitionSample,
        params: &StepParams,
    ) -> Result<bool, RunError> {
        match self.prepared.config.learner {
            LearnerKind::SemiGradient => {
                semi_gradient_step(state, sample, params)?;
                Ok(true)
            }
            LearnerKind::Gq => match gq_step(state, sample, params) {
                Ok(_) => Ok(true),
                Err(gqlab::Error::NonFiniteUpdate) => Ok(false),
                Err(e) => Err(e.into()),
            },
        }
    }

    fn record(&self, state: &LearnerState, snap: Snapshot) -> Record {
        let theta = if state.dim() <= MAX_LOGGED_THETA {
            state.theta.iter().map(|x| fmt_float(*x)).collect::<Vec<_>>().join(";")
        } else {
            String::new()
        };
        Record {
            run: self.run,
            seed: self.seed,
            sigma_schedule: self.key.0.clone(),
            step_sizes: self.key.1.clone(),
            episode: snap.episode,
            step: snap.step,
            sigma: snap.sigma,
            mspbe: snap.mspbe,
            empirical_mspbe: snap.empirical_mspbe,
            episode_return: snap.episode_return,
            episode_length: snap.episode_length,
            theta_norm: state.theta.norm2(),
            omega_norm: state.omega.norm2(),
            diverged: snap.diverged,
            theta,
        }
    }

    fn finite(&self, env: &FiniteEnv, features: &FiniteFeatures) -> Result<(Vec<Record>, Option<u64>), RunError> {
        let config = &self.prepared.config;
        let [mut env_rng, mut policy_rng, mut sigma_rng] = streams(self.seed);
        let mut rollout = FiniteRollout::new(env, features, &mut env_rng, &mut policy_rng);
        let mut state = LearnerState::new(self.prepared.theta0.clone());
        let mut moments = config
            .empirical_mspbe
            .then(|| (EmpiricalMoments::new(self.prepared.dim), DenseVector::zeros(self.prepared.dim)));
        let mut oracles: HashMap<u64, Option<ModelOracle>> = HashMap::new();
        let episodic = env.mdp().is_episodic();
        let cadence = config.cadence();
        let (mut ret, mut len) = (0.0, 0u64);
        let (mut last_return, mut last_length) = (f64::NAN, f64::NAN);
        let mut records = Vec::new();
        let mut diverged_at = None;

        for k in 0..config.n_steps.unwrap_or(0) {
            let level = if episodic { state.episode } else { k / config.sigma_period };
            let sigma = self.schedule.next(level, &mut sigma_rng);
            let params = self.params(k, sigma);
            let sample = rollout.next_sample(&mut env_rng, &mut policy_rng);
            if let Some((m, trace)) = &mut moments {
                *trace = update_trace(trace, &sample.phi, params.gamma, params.lambda)?;
                m.accumulate(&sample, trace, sigma, params.gamma)?;
                if sample.is_terminal() {
                    trace.fill(0.0);
                }
            }
            let finite = self.learn(&mut state, &sample, &params)?;
            ret += sample.reward;
            len += 1;
            if sample.is_terminal() {
                last_return = ret;
                last_length = len as f64;
                ret = 0.0;
                len = 0;
            }
            let diverged =
                !finite || divergence_monitor(&state.theta, config.divergence_threshold) == DivergenceStatus::Diverged;
            if diverged || (k + 1) % cadence == 0 {
                let mean_sigma = self.schedule.mean(level);
                let oracle = oracles.entry(mean_sigma.to_bits()).or_insert_with(|| {
                    ModelOracle::new(
                        env.mdp().clone(),
                        env.target().clone(),
                        env.behavior().clone(),
                        features.full_matrix().clone(),
                        mean_sigma,
                        config.lambda,
                    )
                    .ok()
                });
                let mspbe = oracle.as_ref().and_then(|o| o.mspbe(&state.theta).ok()).unwrap_or(f64::NAN);
                let empirical_mspbe =
                    moments.as_ref().and_then(|(m, _)| m.mspbe(&state.theta, config.ridge).ok()).unwrap_or(f64::NAN);
                let snap = Snapshot {
                    episode: state.episode,
                    step: k + 1,
                    sigma,
                    mspbe,
                    empirical_mspbe,
                    episode_return: last_return,
                    episode_length: last_length,
                    diverged,
                };
                records.push(self.record(&state, snap));
            }
            if diverged {
                diverged_at = Some(k + 1);
                break;
            }
        }
        Ok((records, diverged_at))
    }

    fn control(&self, env: &MountainCar, features: &TileCoding) -> Result<(Vec<Record>, Option<u64>), RunError> {
        let config = &self.prepared.config;
        let [mut env_rng, mut policy_rng, mut sigma_rng] = streams(self.seed);
        let mut state = LearnerState::new(self.prepared.theta0.clone());
        let cap = env.episode_cap().unwrap_or(usize::MAX) as u64;
        let mut records = Vec::new();
        let mut diverged_at = None;
        let mut k = 0u64;

        for episode in 0..config.n_episodes.unwrap_or(0) {
            let mut s = env.reset(&mut env_rng);
            let mut a = epsilon_greedy(&state.theta, features, &s, config.epsilon, &mut policy_rng);
            let (mut ret, mut len, mut sigma_sum) = (0.0, 0u64, 0.0);
            let mut finite;
            loop {
                let sigma = self.schedule.next(episode, &mut sigma_rng);
                let params = self.params(k, sigma);
                let (s2, r) = env.step(&s, a, &mut env_rng);
                let phi = features.evaluate(&s, a);
                let (sample, a2) = if env.is_terminal(&s2) {
                    (TransitionSample { phi, reward: r, next: None }, None)
                } else {
                    let a2 = epsilon_greedy(&state.theta, features, &s2, config.epsilon, &mut policy_rng);
                    let next = NextFeatures {
                        sampled: Some(features.evaluate(&s2, a2)),
                        expected: greedy_expected_feature(&state.theta, features, &s2),
                    };
                    (TransitionSample { phi, reward: r, next: Some(next) }, Some(a2))
                };
                finite = self.learn(&mut state, &sample, &params)?
                    && divergence_monitor(&state.theta, config.divergence_threshold) == DivergenceStatus::Ok;
                ret += r;
                len += 1;
                k += 1;
                sigma_sum += sigma;
                let Some(a2) = a2 else { break };
                if !finite {
                    break;
                }
                if len >= cap {
                    // truncated, not terminal: bootstrap was kept, trace is dropped
                    state.end_episode();
                    break;
                }
                s = s2;
                a = a2;
            }
            let snap = Snapshot {
                episode,
                step: k,
                sigma: sigma_sum / len as f64,
                mspbe: f64::NAN,
                empirical_mspbe: f64::NAN,
                episode_return: ret,
                episode_length: len as f64,
                diverged: !finite,
            };
            records.push(self.record(&state, snap));
            if !finite {
                diverged_at = Some(k);
                break;
            }
        }
        Ok((records, diverged_at))
    }
}

fn action_values(theta: &DenseVector, features: &TileCoding, state: &MountainCarState) -> [f64; 3] {
    let mut q = [0.0; 3];
    for (a, value) in q.iter_mut().enumerate() {
        *value = features.active(state, a).iter().map(|&i| theta[i]).sum();
    }
    q
}

fn maximizers(q: &[f64; 3]) -> Vec<usize> {
    let best = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (0..3).filter(|&a| q[a] == best).collect()
}

/// ε-greedy with uniform tie-breaking.
fn epsilon_greedy<R: Rng + ?Sized>(
    theta: &DenseVector,
    features: &TileCoding,
    state: &MountainCarState,
    epsilon: f64,
    rng: &mut R,
) -> usize {
    if rng.random::<f64>() < epsilon {
        return rng.random_range(0..3);
    }
    let best = maximizers(&action_values(theta, features, state));
    best[rng.random_range(0..best.len())]
}

/// Feature expectation under the greedy target, ties shared uniformly.
fn greedy_expected_feature(theta: &DenseVector, features: &TileCoding, state: &MountainCarState) -> DenseVector {
    let best = maximizers(&action_values(theta, features, state));
    let w = 1.0 / best.len() as f64;
    let mut out = DenseVector::zeros(features.dim());
    for a in best {
        for i in features.active(state, a) {
            out[i] += w;
        }
    }
    out
}

/// 17 significant digits, lossless for `f64`.
pub fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}
