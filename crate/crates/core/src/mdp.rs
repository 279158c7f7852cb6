//! Finite MDPs, tabular policies and the model-based oracles used as ground
//! truth for the learners: stationary distribution, closed-form `A`, `b`, `M`,
//! TD fixed point, MSPBE and its gradient.
//!
//! Episodic models mark terminal states. For the oracle a transition into a
//! terminal state is dropped from the bootstrap kernels (zero bootstrap, trace
//! reset) and the behavior chain restarts from the initial distribution, so
//! the closed forms describe exactly what the simulator produces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};

const PROB_TOLERANCE: f64 = 1e-12;
const STATIONARY_CUTOFF: f64 = 1e-12;
const STATIONARY_MAX_ITERS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    /// `P[s][a][s']`, flattened.
    transition: Vec<f64>,
    /// `R[s][a]`, flattened.
    reward: Vec<f64>,
    gamma: f64,
    terminal: Vec<bool>,
    initial: Vec<f64>,
}

impl FiniteMdp {
    /// Continuing MDP with a uniform initial distribution.
    pub fn new(n_states: usize, n_actions: usize, transition: Vec<f64>, reward: Vec<f64>, gamma: f64) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidModel("need at least one state and one action".into()));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::DimensionMismatch { expected: n_states * n_actions * n_states, got: transition.len() });
        }
        if reward.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch { expected: n_states * n_actions, got: reward.len() });
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidModel(format!("gamma must lie in (0,1), got {gamma}")));
        }
        if let Some(i) = reward.iter().position(|r| !r.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        for (row_idx, row) in transition.chunks(n_states).enumerate() {
            check_distribution(row).map_err(|msg| {
                Error::InvalidModel(format!(
                    "transition row (s={}, a={}): {msg}",
                    row_idx / n_actions,
                    row_idx % n_actions
                ))
            })?;
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
            terminal: vec![false; n_states],
            initial: vec![1.0 / n_states as f64; n_states],
        })
    }

    pub fn with_terminal(mut self, terminal: Vec<bool>) -> Result<Self> {
        if terminal.len() != self.n_states {
            return Err(Error::DimensionMismatch { expected: self.n_states, got: terminal.len() });
        }
        if terminal.iter().all(|&t| t) {
            return Err(Error::InvalidModel("every state is terminal".into()));
        }
        self.terminal = terminal;
        self.check_initial()?;
        Ok(self)
    }

    pub fn with_initial(mut self, initial: Vec<f64>) -> Result<Self> {
        if initial.len() != self.n_states {
            return Err(Error::DimensionMismatch { expected: self.n_states, got: initial.len() });
        }
        check_distribution(&initial).map_err(|msg| Error::InvalidModel(format!("initial distribution: {msg}")))?;
        self.initial = initial;
        self.check_initial()?;
        Ok(self)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidModel(format!("gamma must lie in (0,1), got {gamma}")));
        }
        self.gamma = gamma;
        Ok(self)
    }

    fn check_initial(&self) -> Result<()> {
        let on_terminal: f64 = (0..self.n_states).filter(|&s| self.terminal[s]).map(|s| self.initial[s]).sum();
        if on_terminal > 0.0 {
            return Err(Error::InvalidModel("initial distribution puts mass on a terminal state".into()));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Number of state-action pairs.
    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn pair(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + next]
    }

    pub fn next_distribution(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn initial_distribution(&self) -> &[f64] {
        &self.initial
    }

    pub fn is_episodic(&self) -> bool {
        self.terminal.iter().any(|&t| t)
    }

    /// `P^x[(s,a),(s',a')] = P(s'|s,a) x(a'|s')`. With `continuation` set,
    /// transitions into terminal states are dropped.
    pub fn pair_kernel(&self, policy: &TabularPolicy, continuation: bool) -> Result<DenseMatrix> {
        self.check_policy(policy)?;
        let n = self.n_pairs();
        let mut k = DenseMatrix::zeros(n, n);
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = self.pair(s, a);
                for s2 in 0..self.n_states {
                    let p = self.prob(s, a, s2);
                    if p == 0.0 || (continuation && self.terminal[s2]) {
                        continue;
                    }
                    for a2 in 0..self.n_actions {
                        k[(row, self.pair(s2, a2))] = p * policy.prob(s2, a2);
                    }
                }
            }
        }
        Ok(k)
    }

    /// State chain under `behavior`; entering a terminal state restarts from
    /// the initial distribution.
    pub fn behavior_chain(&self, behavior: &TabularPolicy) -> Result<DenseMatrix> {
        self.check_policy(behavior)?;
        let n = self.n_states;
        let mut k = DenseMatrix::zeros(n, n);
        for s in 0..n {
            for a in 0..self.n_actions {
                let w = behavior.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                for s2 in 0..n {
                    let p = w * self.prob(s, a, s2);
                    if p == 0.0 {
                        continue;
                    }
                    if self.terminal[s2] {
                        for s0 in 0..n {
                            k[(s, s0)] += p * self.initial[s0];
                        }
                    } else {
                        k[(s, s2)] += p;
                    }
                }
            }
        }
        Ok(k)
    }

    /// Expected one-step reward vector `R^x(s) = Σ_a x(a|s) R(s,a)` over states.
    pub fn policy_reward(&self, policy: &TabularPolicy) -> Result<DenseVector> {
        self.check_policy(policy)?;
        Ok(DenseVector::from_fn(self.n_states, |s| {
            (0..self.n_actions).map(|a| policy.prob(s, a) * self.reward(s, a)).sum()
        }))
    }

    /// Policy-induced state kernel `P^x(s, s') = Σ_a x(a|s) P(s'|s,a)`, raw.
    pub fn policy_state_kernel(&self, policy: &TabularPolicy) -> Result<DenseMatrix> {
        self.check_policy(policy)?;
        Ok(DenseMatrix::from_fn(self.n_states, self.n_states, |s, s2| {
            (0..self.n_actions).map(|a| policy.prob(s, a) * self.prob(s, a, s2)).sum()
        }))
    }

    /// State values `(I - γP^x)⁻¹ R^x` with the raw kernel.
    pub fn state_values(&self, policy: &TabularPolicy) -> Result<DenseVector> {
        let p = self.policy_state_kernel(policy)?;
        let lhs = DenseMatrix::identity(self.n_states).sub(&p.scaled(self.gamma))?;
        lhs.solve(&self.policy_reward(policy)?)
    }

    /// Action values solving `q = R + γP^x q` with the raw kernel.
    pub fn action_values(&self, policy: &TabularPolicy) -> Result<DenseVector> {
        let k = self.pair_kernel(policy, false)?;
        let lhs = DenseMatrix::identity(self.n_pairs()).sub(&k.scaled(self.gamma))?;
        lhs.solve(&DenseVector::new(self.reward.clone())?)
    }

    fn check_policy(&self, policy: &TabularPolicy) -> Result<()> {
        if policy.n_states() != self.n_states || policy.n_actions() != self.n_actions {
            return Err(Error::DimensionMismatch {
                expected: self.n_pairs(),
                got: policy.n_states() * policy.n_actions(),
            });
        }
        Ok(())
    }
}

fn check_distribution(row: &[f64]) -> std::result::Result<(), String> {
    if let Some(x) = row.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(format!("entry {x} is not a probability"));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > PROB_TOLERANCE {
        return Err(format!("sums to {total}, not 1"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch { expected: n_states * n_actions, got: probs.len() });
        }
        for (s, row) in probs.chunks(n_actions.max(1)).enumerate() {
            check_distribution(row).map_err(|msg| Error::InvalidModel(format!("policy row {s}: {msg}")))?;
        }
        Ok(Self { n_states, n_actions, probs })
    }

    /// Same action distribution in every state.
    pub fn state_independent(n_states: usize, row: &[f64]) -> Result<Self> {
        Self::new(n_states, row.len(), row.repeat(n_states))
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, probs: vec![1.0 / n_actions as f64; n_states * n_actions] }
    }

    pub fn deterministic(n_actions: usize, choices: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; choices.len() * n_actions];
        for (s, &a) in choices.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::InvalidModel(format!("action {a} out of range in state {s}")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Ok(Self { n_states: choices.len(), n_actions, probs })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Convex combination `w·self + (1-w)·other`.
    pub fn mix(&self, other: &TabularPolicy, w: f64) -> Result<TabularPolicy> {
        if self.probs.len() != other.probs.len() {
            return Err(Error::DimensionMismatch { expected: self.probs.len(), got: other.probs.len() });
        }
        let probs = self.probs.iter().zip(&other.probs).map(|(a, b)| w * a + (1.0 - w) * b).collect();
        Ok(TabularPolicy { probs, ..*self })
    }
}

/// Stationary distribution over state-action pairs, `ξ(s)·μ(a|s)`, of the
/// behavior chain (with restarts for episodic models).
pub fn stationary_distribution(mdp: &FiniteMdp, behavior: &TabularPolicy) -> Result<DenseVector> {
    let chain = mdp.behavior_chain(behavior)?;
    let xi = stationary_states(&chain)?;
    Ok(DenseVector::from_fn(mdp.n_pairs(), |i| {
        let (s, a) = (i / mdp.n_actions(), i % mdp.n_actions());
        xi[s] * behavior.prob(s, a)
    }))
}

/// Stationary distribution of a row-stochastic state chain.
pub fn stationary_states(chain: &DenseMatrix) -> Result<DenseVector> {
    let n = chain.rows();
    let identity = DenseMatrix::identity(n);
    let generator = identity.sub(chain)?;
    if generator.rank() + 1 < n {
        return Err(Error::NoConvergence("behavior chain has more than one recurrent class".into()));
    }
    // lazy chain: same stationary distribution, no periodicity
    let lazy = identity.add(chain)?.scaled(0.5);
    let mut x = DenseVector::from_fn(n, |_| 1.0 / n as f64);
    for _ in 0..STATIONARY_MAX_ITERS {
        let next = lazy.tr_matvec(&x)?;
        let change = next.sub(&x).norm1();
        x = next;
        if change < STATIONARY_CUTOFF {
            return Ok(normalized(x));
        }
    }
    // fall back to solving ξᵀ(I - P) = 0 with Σξ = 1 replacing one equation
    let mut lhs = generator.transpose();
    for j in 0..n {
        lhs[(n - 1, j)] = 1.0;
    }
    let rhs = DenseVector::basis(n, n - 1);
    let xi = lhs
        .solve(&rhs)
        .map_err(|e| Error::NoConvergence(format!("power iteration stalled and direct solve failed: {e}")))?;
    Ok(normalized(xi))
}

fn normalized(mut x: DenseVector) -> DenseVector {
    x.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    let total: f64 = x.iter().sum();
    x.scale(1.0 / total);
    x
}

/// Closed-form model quantities for one `(σ, λ)` configuration.
#[derive(Debug, Clone)]
pub struct ModelOracle {
    mdp: FiniteMdp,
    target: TabularPolicy,
    behavior: TabularPolicy,
    features: DenseMatrix,
    sigma: f64,
    lambda: f64,
    weights: DenseVector,
    kernel_behavior: DenseMatrix,
    kernel_target: DenseMatrix,
    /// `(I - γλP^μ)⁻¹`
    resolvent: DenseMatrix,
    a: DenseMatrix,
    b: DenseVector,
    m: DenseMatrix,
}

impl ModelOracle {
    /// `features` is Φ with one row per state-action pair (`s * n_actions + a`).
    pub fn new(
        mdp: FiniteMdp,
        target: TabularPolicy,
        behavior: TabularPolicy,
        features: DenseMatrix,
        sigma: f64,
        lambda: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&sigma) || !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidModel(format!("sigma={sigma} and lambda={lambda} must lie in [0,1]")));
        }
        if features.rows() != mdp.n_pairs() {
            return Err(Error::DimensionMismatch { expected: mdp.n_pairs(), got: features.rows() });
        }
        let n = mdp.n_pairs();
        let gamma = mdp.gamma();
        let weights = stationary_distribution(&mdp, &behavior)?;
        let kernel_behavior = mdp.pair_kernel(&behavior, true)?;
        let kernel_target = mdp.pair_kernel(&target, true)?;
        let resolvent = DenseMatrix::identity(n).sub(&kernel_behavior.scaled(gamma * lambda))?.invert()?;

        let weighted_t = weighted_transpose(&features, &weights);
        let left = weighted_t.matmul(&resolvent)?;
        let mixed = kernel_target
            .scaled((1.0 - sigma) * gamma)
            .add(&kernel_behavior.scaled(sigma * gamma))?
            .sub(&DenseMatrix::identity(n))?;
        let a = left.matmul(&mixed.matmul(&features)?)?;
        let b = left.matvec(&DenseVector::new(mdp.rewards().to_vec())?)?;
        let m = weighted_t.matmul(&features)?;
        Ok(Self {
            mdp,
            target,
            behavior,
            features,
            sigma,
            lambda,
            weights,
            kernel_behavior,
            kernel_target,
            resolvent,
            a,
            b,
            m,
        })
    }

    /// Same model, different `(σ, λ)`.
    pub fn with_params(&self, sigma: f64, lambda: f64) -> Result<Self> {
        Self::new(self.mdp.clone(), self.target.clone(), self.behavior.clone(), self.features.clone(), sigma, lambda)
    }

    pub fn mdp(&self) -> &FiniteMdp {
        &self.mdp
    }

    pub fn target(&self) -> &TabularPolicy {
        &self.target
    }

    pub fn behavior(&self) -> &TabularPolicy {
        &self.behavior
    }

    pub fn feature_matrix(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Stationary state-action weights (diagonal of Ξ).
    pub fn stationary(&self) -> &DenseVector {
        &self.weights
    }

    pub fn closed_form_a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn closed_form_b(&self) -> &DenseVector {
        &self.b
    }

    /// `M = ΦᵀΞΦ`
    pub fn feature_covariance(&self) -> &DenseMatrix {
        &self.m
    }

    /// `R + γP^π q`, raw kernel.
    pub fn bellman_apply(&self, q: &DenseVector) -> Result<DenseVector> {
        let n = self.mdp.n_pairs();
        if q.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: q.len() });
        }
        let k = self.mdp.pair_kernel(&self.target, false)?;
        let mut out = k.matvec(q)?;
        out.scale(self.mdp.gamma());
        out.axpy(1.0, &DenseVector::new(self.mdp.rewards().to_vec())?);
        Ok(out)
    }

    /// `θ* = -A⁻¹b`
    pub fn td_fixed_point(&self) -> Result<DenseVector> {
        Ok(self.a.solve(&self.b)?.scaled(-1.0))
    }

    /// `Aθ + b`
    pub fn residual(&self, theta: &DenseVector) -> Result<DenseVector> {
        let mut r = self.a.matvec(theta)?;
        r.axpy(1.0, &self.b);
        Ok(r)
    }

    /// `ω(θ) = M⁻¹(Aθ + b)`, the fast iterate's target.
    pub fn omega_target(&self, theta: &DenseVector) -> Result<DenseVector> {
        self.m.solve(&self.residual(theta)?)
    }

    /// `½ (Aθ+b)ᵀ M⁻¹ (Aθ+b)`
    pub fn mspbe(&self, theta: &DenseVector) -> Result<f64> {
        let r = self.residual(theta)?;
        Ok(0.5 * r.dot(&self.m.solve(&r)?))
    }

    /// `Aᵀ M⁻¹ (Aθ+b)`
    pub fn mspbe_gradient(&self, theta: &DenseVector) -> Result<DenseVector> {
        self.a.tr_matvec(&self.omega_target(theta)?)
    }

    /// `(θ*, ω(θ))`
    pub fn ode_fixed_points(&self, theta: &DenseVector) -> Result<(DenseVector, DenseVector)> {
        Ok((self.td_fixed_point()?, self.omega_target(theta)?))
    }

    /// `Π = Φ(ΦᵀΞΦ)⁻¹ΦᵀΞ`
    pub fn projection(&self) -> Result<DenseMatrix> {
        let weighted_t = weighted_transpose(&self.features, &self.weights);
        self.features.matmul(&self.m.invert()?)?.matmul(&weighted_t)
    }

    /// Mixed-sampling λ-operator on action values:
    /// `q + (I-γλP^μ)⁻¹(R + γ(σP^μ + (1-σ)P^π)q - q)`.
    pub fn mixed_operator(&self, q: &DenseVector) -> Result<DenseVector> {
        let gamma = self.mdp.gamma();
        let mut backup = self.kernel_behavior.matvec(q)?.scaled(self.sigma * gamma);
        backup.axpy((1.0 - self.sigma) * gamma, &self.kernel_target.matvec(q)?);
        backup.axpy(1.0, &DenseVector::new(self.mdp.rewards().to_vec())?);
        backup.axpy(-1.0, q);
        Ok(q.add(&self.resolvent.matvec(&backup)?))
    }

    /// `½‖Π B(Φθ) - Φθ‖²_Ξ`, evaluated through the projection matrix.
    pub fn projected_mspbe(&self, theta: &DenseVector) -> Result<f64> {
        let q = self.features.matvec(theta)?;
        let diff = self.projection()?.matvec(&self.mixed_operator(&q)?)?.sub(&q);
        Ok(0.5 * diff.iter().zip(self.weights.iter()).map(|(d, w)| w * d * d).sum::<f64>())
    }

    /// `E[lead · eᵀ]` where `lead` is the correction vector of one GQ step,
    /// built from the trace/next-feature cross moments.
    pub fn expected_correction(&self) -> Result<DenseMatrix> {
        let weighted_t = weighted_transpose(&self.features, &self.weights);
        let left = weighted_t.matmul(&self.resolvent)?;
        // E[e φ(S',A')ᵀ] and E[e E_πφ(S',·)ᵀ]
        let cross_behavior = left.matmul(&self.kernel_behavior.matmul(&self.features)?)?;
        let cross_target = left.matmul(&self.kernel_target.matmul(&self.features)?)?;
        let (s, l) = (self.sigma, self.lambda);
        let trace_lead = cross_target
            .scaled(1.0 - s)
            .sub(&cross_behavior.scaled((1.0 - s) * l))?
            .add(&cross_behavior.scaled(s * (1.0 - l)))?;
        Ok(trace_lead.transpose())
    }
}

/// `ΦᵀΞ` as a dense `p × n` matrix.
fn weighted_transpose(features: &DenseMatrix, weights: &DenseVector) -> DenseMatrix {
    DenseMatrix::from_fn(features.cols(), features.rows(), |j, i| features[(i, j)] * weights[i])
}
