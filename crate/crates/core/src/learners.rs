//! Eligibility traces, the σ-mixed TD error, the semi-gradient Q(σ,λ) learner,
//! the two-timescale GQ(σ,λ) learner, and σ / step-size schedules.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, DenseVector};
use crate::mdp::ModelOracle;

/// Features of the successor pair.
#[derive(Debug, Clone, PartialEq)]
pub struct NextFeatures {
    /// `φ(S', A')`; only needed when σ > 0.
    pub sampled: Option<DenseVector>,
    /// `Σ_a π(a|S') φ(S', a)`
    pub expected: DenseVector,
}

/// One observed transition, already mapped to features.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSample {
    pub phi: DenseVector,
    pub reward: f64,
    /// `None` when the successor is terminal.
    pub next: Option<NextFeatures>,
}

impl TransitionSample {
    pub fn is_terminal(&self) -> bool {
        self.next.is_none()
    }

    /// `σφ' + (1-σ)E_πφ'`, or `None` at a terminal transition.
    pub fn bootstrap_features(&self, sigma: f64) -> Result<Option<DenseVector>> {
        let Some(next) = &self.next else { return Ok(None) };
        let mut x = next.expected.scaled(1.0 - sigma);
        if sigma > 0.0 {
            let sampled = next.sampled.as_ref().ok_or(Error::MissingNextAction)?;
            x.axpy(sigma, sampled);
        }
        Ok(Some(x))
    }
}

/// Per-step hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    pub gamma: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub alpha: f64,
    /// Secondary step size `β = η·α`.
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub theta: DenseVector,
    pub omega: DenseVector,
    pub trace: DenseVector,
    pub step: u64,
    pub episode: u64,
}

impl LearnerState {
    pub fn new(theta: DenseVector) -> Self {
        let p = theta.len();
        Self { theta, omega: DenseVector::zeros(p), trace: DenseVector::zeros(p), step: 0, episode: 0 }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Closes the current episode: the next step starts from a zero trace.
    pub fn end_episode(&mut self) {
        self.trace.fill(0.0);
        self.episode += 1;
    }
}

/// `λγ·e + φ`
pub fn update_trace(trace: &DenseVector, phi: &DenseVector, gamma: f64, lambda: f64) -> Result<DenseVector> {
    check_len(trace.len(), phi.len())?;
    let mut out = trace.scaled(lambda * gamma);
    out.axpy(1.0, phi);
    Ok(out)
}

/// `R + γθᵀ(σφ' + (1-σ)E_πφ') - θᵀφ`, with no bootstrap at a terminal transition.
pub fn delta_sigma(theta: &DenseVector, sample: &TransitionSample, sigma: f64, gamma: f64) -> Result<f64> {
    check_len(theta.len(), sample.phi.len())?;
    let bootstrap = match sample.bootstrap_features(sigma)? {
        Some(x) => {
            check_len(theta.len(), x.len())?;
            gamma * theta.dot(&x)
        }
        None => 0.0,
    };
    Ok(sample.reward + bootstrap - theta.dot(&sample.phi))
}

/// Backward-view semi-gradient Q(σ,λ): `θ += αδe`. Returns δ. The iterate is
/// allowed to blow up; nothing here checks for finiteness.
pub fn semi_gradient_step(state: &mut LearnerState, sample: &TransitionSample, params: &StepParams) -> Result<f64> {
    let trace = update_trace(&state.trace, &sample.phi, params.gamma, params.lambda)?;
    let delta = delta_sigma(&state.theta, sample, params.sigma, params.gamma)?;
    state.theta.axpy(params.alpha * delta, &trace);
    state.trace = trace;
    state.step += 1;
    if sample.is_terminal() {
        state.end_episode();
    }
    Ok(delta)
}

/// One GQ(σ,λ) step: trace, δ, correction vector, then θ and ω from their
/// old values. The rank-one correction is applied as `lead · (eᵀω)`. Returns δ.
pub fn gq_step(state: &mut LearnerState, sample: &TransitionSample, params: &StepParams) -> Result<f64> {
    let (gamma, lambda, sigma) = (params.gamma, params.lambda, params.sigma);
    let trace = update_trace(&state.trace, &sample.phi, gamma, lambda)?;
    let delta = delta_sigma(&state.theta, sample, sigma, gamma)?;
    check_len(state.omega.len(), trace.len())?;

    let trace_dot_omega = trace.dot(&state.omega);
    let phi_dot_omega = sample.phi.dot(&state.omega);

    let mut theta = state.theta.clone();
    axpy(theta.as_mut_slice(), params.alpha * delta, trace.as_slice());
    if let Some(next) = &sample.next {
        // lead = (1-σ)(E_πφ' - λφ') + σ(1-λ)φ'
        let c = -params.alpha * gamma * trace_dot_omega;
        axpy(theta.as_mut_slice(), c * (1.0 - sigma), next.expected.as_slice());
        let sampled_weight = sigma * (1.0 - lambda) - (1.0 - sigma) * lambda;
        if sampled_weight != 0.0 {
            let sampled = next.sampled.as_ref().ok_or(Error::MissingNextAction)?;
            axpy(theta.as_mut_slice(), c * sampled_weight, sampled.as_slice());
        }
    }

    let mut omega = state.omega.clone();
    axpy(omega.as_mut_slice(), params.beta * delta, trace.as_slice());
    axpy(omega.as_mut_slice(), -params.beta * phi_dot_omega, sample.phi.as_slice());

    if !theta.is_finite() || !omega.is_finite() || !delta.is_finite() {
        return Err(Error::NonFiniteUpdate);
    }
    state.theta = theta;
    state.omega = omega;
    state.trace = trace;
    state.step += 1;
    if sample.is_terminal() {
        state.end_episode();
    }
    Ok(delta)
}

/// Forward view with θ frozen: `Σ_k α (Σ_{t≥k} (λγ)^{t-k} δ_t) φ_k`.
pub fn offline_lambda_return_update(
    episode: &[TransitionSample],
    theta: &DenseVector,
    params: &StepParams,
) -> Result<DenseVector> {
    let deltas =
        episode.iter().map(|s| delta_sigma(theta, s, params.sigma, params.gamma)).collect::<Result<Vec<f64>>>()?;
    let decay = params.lambda * params.gamma;
    let mut total = DenseVector::zeros(theta.len());
    for (k, sample) in episode.iter().enumerate() {
        let mut weight = 1.0;
        let mut lambda_error = 0.0;
        for delta in &deltas[k..] {
            lambda_error += weight * delta;
            weight *= decay;
        }
        total.axpy(params.alpha * lambda_error, &sample.phi);
    }
    Ok(total)
}

/// Backward view with θ frozen: `Σ_k α δ_k e_k`.
pub fn backward_total_update(
    episode: &[TransitionSample],
    theta: &DenseVector,
    params: &StepParams,
) -> Result<DenseVector> {
    let mut trace = DenseVector::zeros(theta.len());
    let mut total = DenseVector::zeros(theta.len());
    for sample in episode {
        trace = update_trace(&trace, &sample.phi, params.gamma, params.lambda)?;
        let delta = delta_sigma(theta, sample, params.sigma, params.gamma)?;
        total.axpy(params.alpha * delta, &trace);
    }
    Ok(total)
}

/// Exact expectation of the GQ θ-increment direction under the stationary
/// distribution: `E[δe] - γE[lead·eᵀ]ω`.
pub fn expected_gq_direction(oracle: &ModelOracle, theta: &DenseVector, omega: &DenseVector) -> Result<DenseVector> {
    let gamma = oracle.mdp().gamma();
    let mut dir = oracle.residual(theta)?;
    dir.axpy(-gamma, &oracle.expected_correction()?.matvec(omega)?);
    Ok(dir)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaSchedule {
    Fixed {
        value: f64,
    },
    /// `σ ~ N(μ, sd²)` clamped to [0,1], with μ stepping through a grid once
    /// per episode and wrapping around.
    Dynamic {
        #[serde(default = "default_mu_start")]
        mu_start: f64,
        #[serde(default = "default_mu_end")]
        mu_end: f64,
        #[serde(default = "default_mu_step")]
        mu_step: f64,
        #[serde(default = "default_noise_sd")]
        noise_sd: f64,
    },
}

fn default_mu_start() -> f64 {
    0.02
}
fn default_mu_end() -> f64 {
    0.98
}
fn default_mu_step() -> f64 {
    0.02
}
fn default_noise_sd() -> f64 {
    0.01
}

impl SigmaSchedule {
    pub fn fixed(value: f64) -> Self {
        SigmaSchedule::Fixed { value }
    }

    pub fn dynamic() -> Self {
        SigmaSchedule::Dynamic {
            mu_start: default_mu_start(),
            mu_end: default_mu_end(),
            mu_step: default_mu_step(),
            noise_sd: default_noise_sd(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SigmaSchedule::Fixed { value } if !(0.0..=1.0).contains(&value) => {
                Err(Error::InvalidModel(format!("fixed sigma {value} outside [0,1]")))
            }
            SigmaSchedule::Dynamic { mu_start, mu_end, mu_step, noise_sd } => {
                let ok = (0.0..=1.0).contains(&mu_start)
                    && (0.0..=1.0).contains(&mu_end)
                    && mu_start <= mu_end
                    && mu_step > 0.0
                    && noise_sd >= 0.0;
                if ok {
                    Ok(())
                } else {
                    Err(Error::InvalidModel(
                        "dynamic sigma needs 0<=mu_start<=mu_end<=1, mu_step>0, noise_sd>=0".into(),
                    ))
                }
            }
            _ => Ok(()),
        }
    }

    /// Short label used in output tables.
    pub fn label(&self) -> String {
        match self {
            SigmaSchedule::Fixed { value } => format!("{value}"),
            SigmaSchedule::Dynamic { .. } => "dynamic".to_string(),
        }
    }

    /// Mean of the draw in the given episode.
    pub fn mean(&self, episode: u64) -> f64 {
        match *self {
            SigmaSchedule::Fixed { value } => value,
            SigmaSchedule::Dynamic { mu_start, mu_end, mu_step, .. } => {
                let levels = ((mu_end - mu_start) / mu_step + 1e-9).floor() as u64 + 1;
                mu_start + mu_step * (episode % levels) as f64
            }
        }
    }

    pub fn next<R: Rng + ?Sized>(&self, episode: u64, rng: &mut R) -> f64 {
        match *self {
            SigmaSchedule::Fixed { value } => value,
            SigmaSchedule::Dynamic { noise_sd, .. } => {
                let z: f64 = StandardNormal.sample(rng);
                (self.mean(episode) + noise_sd * z).clamp(0.0, 1.0)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSizes {
    Constant {
        alpha: f64,
        eta: f64,
    },
    /// `α_k = alpha/(k+1)^alpha_decay`, `η_k = eta/(k+1)^eta_decay`, `β_k = η_k α_k`.
    RobbinsMonro {
        alpha: f64,
        #[serde(default = "default_alpha_decay")]
        alpha_decay: f64,
        eta: f64,
        #[serde(default)]
        eta_decay: f64,
    },
}

fn default_alpha_decay() -> f64 {
    0.6
}

impl StepSizes {
    pub fn constant(alpha: f64, eta: f64) -> Self {
        StepSizes::Constant { alpha, eta }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSizes::Constant { alpha, eta } if alpha > 0.0 && eta > 0.0 => Ok(()),
            StepSizes::Constant { .. } => Err(Error::InvalidModel("constant step sizes need alpha>0, eta>0".into())),
            StepSizes::RobbinsMonro { alpha, alpha_decay, eta, eta_decay } => {
                // Σα = Σβ = ∞ and Σα² < ∞
                let ok = alpha > 0.0
                    && eta > 0.0
                    && alpha_decay > 0.5
                    && alpha_decay <= 1.0
                    && eta_decay >= 0.0
                    && alpha_decay + eta_decay <= 1.0;
                if ok {
                    Ok(())
                } else {
                    Err(Error::InvalidModel(
                        "decaying step sizes need alpha,eta>0, alpha_decay in (0.5,1], eta_decay>=0, alpha_decay+eta_decay<=1"
                            .into(),
                    ))
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            StepSizes::Constant { alpha, eta } => format!("a{alpha}_e{eta}"),
            StepSizes::RobbinsMonro { alpha, alpha_decay, eta, eta_decay } => {
                format!("rm_a{alpha}-{alpha_decay}_e{eta}-{eta_decay}")
            }
        }
    }

    /// `(α_k, β_k)` for step index `k` (0-based).
    pub fn at(&self, k: u64) -> (f64, f64) {
        match *self {
            StepSizes::Constant { alpha, eta } => (alpha, eta * alpha),
            StepSizes::RobbinsMonro { alpha, alpha_decay, eta, eta_decay } => {
                let n = (k + 1) as f64;
                let a = alpha / n.powf(alpha_decay);
                (a, eta / n.powf(eta_decay) * a)
            }
        }
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
