//! Sample estimates of `A`, `b`, `M` and the empirical MSPBE, plus run-level
//! statistics: divergence detection, variance and σ case classification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::TransitionSample;
use crate::linalg::{DenseMatrix, DenseVector};

pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// Running means of `e Δᵀ`, `R e` and `φφᵀ` (trace form).
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMoments {
    pub a_hat: DenseMatrix,
    pub b_hat: DenseVector,
    pub m_hat: DenseMatrix,
    pub count: u64,
}

impl EmpiricalMoments {
    pub fn new(dim: usize) -> Self {
        Self {
            a_hat: DenseMatrix::zeros(dim, dim),
            b_hat: DenseVector::zeros(dim),
            m_hat: DenseMatrix::zeros(dim, dim),
            count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.b_hat.len()
    }

    /// Folds one step in; `trace` must already include `sample.phi`.
    pub fn accumulate(&mut self, sample: &TransitionSample, trace: &DenseVector, sigma: f64, gamma: f64) -> Result<()> {
        let p = self.dim();
        if trace.len() != p || sample.phi.len() != p {
            return Err(Error::DimensionMismatch { expected: p, got: trace.len().min(sample.phi.len()) });
        }
        // Δ = γ(σφ' + (1-σ)E_πφ') - φ
        let mut delta_features = match sample.bootstrap_features(sigma)? {
            Some(x) => x.scaled(gamma),
            None => DenseVector::zeros(p),
        };
        delta_features.axpy(-1.0, &sample.phi);

        self.count += 1;
        let w = 1.0 / self.count as f64;
        // mean += w (x - mean) == (1-w) mean + w x
        self.a_hat = self.a_hat.scaled(1.0 - w);
        self.a_hat.add_outer(w, trace.as_slice(), delta_features.as_slice());
        self.m_hat = self.m_hat.scaled(1.0 - w);
        self.m_hat.add_outer(w, sample.phi.as_slice(), sample.phi.as_slice());
        self.b_hat.scale(1.0 - w);
        self.b_hat.axpy(w * sample.reward, trace);
        Ok(())
    }

    /// Count-weighted mean of two accumulators.
    pub fn merge(&self, other: &EmpiricalMoments) -> Result<EmpiricalMoments> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: other.dim() });
        }
        let total = self.count + other.count;
        if total == 0 {
            return Ok(self.clone());
        }
        let (wa, wb) = (self.count as f64 / total as f64, other.count as f64 / total as f64);
        Ok(EmpiricalMoments {
            a_hat: self.a_hat.scaled(wa).add(&other.a_hat.scaled(wb))?,
            b_hat: self.b_hat.scaled(wa).add(&other.b_hat.scaled(wb)),
            m_hat: self.m_hat.scaled(wa).add(&other.m_hat.scaled(wb))?,
            count: total,
        })
    }

    /// `½ (Âθ+b̂)ᵀ M̂⁻¹ (Âθ+b̂)`; `ridge` adds `ridge·I` to `M̂`.
    pub fn mspbe(&self, theta: &DenseVector, ridge: Option<f64>) -> Result<f64> {
        let mut r = self.a_hat.matvec(theta)?;
        r.axpy(1.0, &self.b_hat);
        let m = match ridge {
            Some(eps) => self.m_hat.add(&DenseMatrix::identity(self.dim()).scaled(eps))?,
            None => self.m_hat.clone(),
        };
        Ok((0.5 * r.dot(&m.solve(&r)?)).max(0.0))
    }
}

/// Free-function form of [`EmpiricalMoments::mspbe`].
pub fn empirical_mspbe(moments: &EmpiricalMoments, theta: &DenseVector, ridge: Option<f64>) -> Result<f64> {
    moments.mspbe(theta, ridge)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DivergenceStatus {
    Ok,
    Diverged,
}

/// Diverged when `‖θ‖∞ > threshold` or any entry is not finite.
pub fn divergence_monitor(theta: &DenseVector, threshold: f64) -> DivergenceStatus {
    if theta.iter().any(|x| !x.is_finite() || x.abs() > threshold) {
        DivergenceStatus::Diverged
    } else {
        DivergenceStatus::Ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Case {
    /// Better than both σ=0 and σ=1.
    I,
    /// Neither better than both nor worse than both.
    II,
    /// Worse than both.
    III,
}

impl std::fmt::Display for Case {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Case::I => "I",
            Case::II => "II",
            Case::III => "III",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseSummary {
    /// `(σ, case)` for every intermediate σ, in input order.
    pub labels: Vec<(f64, Case)>,
    /// Percentages of cases I, II, III.
    pub percent: [f64; 3],
}

/// Labels every σ strictly inside (0,1) against the σ=0 and σ=1 rows.
/// Comparisons are strict, so ties with an extreme land in case II.
pub fn classify_cases(rows: &[(f64, f64)], higher_is_better: bool) -> Result<CaseSummary> {
    let find = |target: f64| rows.iter().find(|(s, _)| *s == target).map(|(_, v)| *v);
    let (Some(zero), Some(one)) = (find(0.0), find(1.0)) else {
        return Err(Error::MissingExtremes);
    };
    let better = |a: f64, b: f64| if higher_is_better { a > b } else { a < b };
    let labels: Vec<(f64, Case)> = rows
        .iter()
        .filter(|(s, _)| *s > 0.0 && *s < 1.0)
        .map(|&(s, v)| {
            let case = if better(v, zero) && better(v, one) {
                Case::I
            } else if better(zero, v) && better(one, v) {
                Case::III
            } else {
                Case::II
            };
            (s, case)
        })
        .collect();
    let mut percent = [0.0; 3];
    if !labels.is_empty() {
        for (_, c) in &labels {
            percent[*c as usize] += 100.0 / labels.len() as f64;
        }
    }
    Ok(CaseSummary { labels, percent })
}

/// Sample mean and variance (n-1 denominator).
pub fn mean_and_variance(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::InsufficientRuns(values.len()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, var))
}

/// Medians of consecutive non-overlapping windows; a trailing partial window
/// is dropped.
pub fn windowed_medians(series: &[f64], window: usize) -> Vec<f64> {
    series
        .chunks_exact(window.max(1))
        .map(|w| {
            let mut w = w.to_vec();
            w.sort_by(|a, b| a.total_cmp(b));
            let mid = w.len() / 2;
            if w.len() % 2 == 0 {
                0.5 * (w[mid - 1] + w[mid])
            } else {
                w[mid]
            }
        })
        .collect()
}
