//! Reference computations written without the library's linear algebra,
//! used as independent oracles.

#![allow(dead_code, clippy::needless_range_loop)]

use gqlab::env::FiniteEnv;
use gqlab::features::FiniteFeatures;

pub type Mat = Vec<Vec<f64>>;

/// Gaussian elimination with partial pivoting.
pub fn solve(a: &Mat, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Mat = a.iter().zip(b).map(|(row, &v)| row.iter().copied().chain([v]).collect()).collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, pivot);
        for row in 0..n {
            if row != col {
                let f = m[row][col] / m[col][col];
                for k in col..=n {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
    }
    (0..n).map(|i| m[i][n] / m[i][i]).collect()
}

pub fn mat_vec(a: &Mat, x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// State occupancy of the behavior walk (restarting after termination),
/// by plain power iteration of the averaged chain.
pub fn occupancy(env: &FiniteEnv) -> Vec<f64> {
    let mdp = env.mdp();
    let n = mdp.n_states();
    let mut x = vec![1.0 / n as f64; n];
    for _ in 0..200_000 {
        let mut next = vec![0.0; n];
        for s in 0..n {
            for a in 0..mdp.n_actions() {
                let w = x[s] * env.behavior().prob(s, a);
                for s2 in 0..n {
                    let p = w * mdp.prob(s, a, s2);
                    if mdp.is_terminal(s2) {
                        for (s0, v) in next.iter_mut().enumerate() {
                            *v += p * mdp.initial_distribution()[s0];
                        }
                    } else {
                        next[s2] += p;
                    }
                }
            }
        }
        let avg: Vec<f64> = x.iter().zip(&next).map(|(p, q)| 0.5 * (p + q)).collect();
        let change: f64 = avg.iter().zip(&x).map(|(p, q)| (p - q).abs()).sum();
        x = avg;
        if change < 1e-15 {
            break;
        }
    }
    x
}

/// Moments `(A, b, M)` built from the expected trace per state-action pair,
/// `z(s,a) = d(s,a)φ(s,a) + γλ Σ z(s⁻,a⁻)P(s|s⁻,a⁻)μ(a|s)`, found by
/// fixed-point iteration rather than a matrix inverse.
pub fn trace_moments(env: &FiniteEnv, features: &FiniteFeatures, sigma: f64, lambda: f64) -> (Mat, Vec<f64>, Mat) {
    let mdp = env.mdp();
    let (ns, na, gamma) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let phi = features.full_matrix();
    let p = phi.cols();
    let xi = occupancy(env);
    let d: Vec<f64> = (0..ns * na).map(|i| xi[i / na] * env.behavior().prob(i / na, i % na)).collect();
    let row = |i: usize| phi.row(i).to_vec();

    let mut z: Mat = (0..ns * na).map(|i| row(i).iter().map(|v| v * d[i]).collect()).collect();
    for _ in 0..100_000 {
        let mut next: Mat = (0..ns * na).map(|i| row(i).iter().map(|v| v * d[i]).collect()).collect();
        for i in 0..ns * na {
            let (s, a) = (i / na, i % na);
            for s2 in 0..ns {
                let pr = mdp.prob(s, a, s2);
                if pr == 0.0 || mdp.is_terminal(s2) {
                    continue;
                }
                for a2 in 0..na {
                    let w = gamma * lambda * pr * env.behavior().prob(s2, a2);
                    for k in 0..p {
                        next[s2 * na + a2][k] += w * z[i][k];
                    }
                }
            }
        }
        let change: f64 = next.iter().flatten().zip(z.iter().flatten()).map(|(x, y)| (x - y).abs()).sum();
        z = next;
        if change < 1e-13 {
            break;
        }
    }

    let mut a_mat = vec![vec![0.0; p]; p];
    let mut b = vec![0.0; p];
    let mut m = vec![vec![0.0; p]; p];
    for i in 0..ns * na {
        let (s, a) = (i / na, i % na);
        let mut next_feat = vec![0.0; p];
        for s2 in 0..ns {
            let pr = mdp.prob(s, a, s2);
            if pr == 0.0 || mdp.is_terminal(s2) {
                continue;
            }
            for a2 in 0..na {
                let w = sigma * env.behavior().prob(s2, a2) + (1.0 - sigma) * env.target().prob(s2, a2);
                for k in 0..p {
                    next_feat[k] += gamma * pr * w * phi[(s2 * na + a2, k)];
                }
            }
        }
        let delta_feat: Vec<f64> = next_feat.iter().zip(row(i)).map(|(x, y)| x - y).collect();
        for r in 0..p {
            b[r] += z[i][r] * mdp.reward(s, a);
            for c in 0..p {
                a_mat[r][c] += z[i][r] * delta_feat[c];
                m[r][c] += d[i] * phi[(i, r)] * phi[(i, c)];
            }
        }
    }
    (a_mat, b, m)
}

pub fn max_abs_diff(a: &Mat, b: &gqlab::DenseMatrix) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            worst = worst.max((v - b[(i, j)]).abs());
        }
    }
    worst
}
