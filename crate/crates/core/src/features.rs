//! Feature maps `φ(s, a)`: explicit tables for finite domains and hashed
//! tile coding for Mountain Car.

use crate::env::MountainCarState;
use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::mdp::TabularPolicy;

pub trait FeatureMap<S>: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes `φ(state, action)` into `out`, which has length `dim()`.
    fn write(&self, state: &S, action: usize, out: &mut [f64]);

    /// Upper bound on `‖φ(s,a)‖₂`.
    fn norm_bound(&self) -> f64;

    fn evaluate(&self, state: &S, action: usize) -> DenseVector {
        let mut out = DenseVector::zeros(self.dim());
        self.write(state, action, out.as_mut_slice());
        out
    }
}

/// `Σ_a probs[a] · φ(state, a)`
pub fn expected_feature<S, F: FeatureMap<S> + ?Sized>(features: &F, probs: &[f64], state: &S) -> DenseVector {
    let mut out = DenseVector::zeros(features.dim());
    let mut buf = vec![0.0; features.dim()];
    for (a, &w) in probs.iter().enumerate() {
        if w != 0.0 {
            features.write(state, a, &mut buf);
            crate::linalg::axpy(out.as_mut_slice(), w, &buf);
        }
    }
    out
}

/// Expected feature under a tabular policy at a finite state.
pub fn expected_feature_tabular<F: FeatureMap<usize> + ?Sized>(
    features: &F,
    policy: &TabularPolicy,
    state: usize,
) -> DenseVector {
    expected_feature(features, policy.row(state), &state)
}

/// Explicit feature table for a finite state-action space.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteFeatures {
    n_states: usize,
    n_actions: usize,
    table: DenseMatrix,
}

impl FiniteFeatures {
    /// `table` holds one row per pair, indexed `s * n_actions + a`.
    pub fn new(n_states: usize, n_actions: usize, table: DenseMatrix) -> Result<Self> {
        if table.rows() != n_states * n_actions {
            return Err(Error::DimensionMismatch { expected: n_states * n_actions, got: table.rows() });
        }
        Ok(Self { n_states, n_actions, table })
    }

    /// Same state feature for every action.
    pub fn state_only(n_actions: usize, state_rows: &[Vec<f64>]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = state_rows.iter().flat_map(|r| std::iter::repeat_n(r.clone(), n_actions)).collect();
        Self::new(state_rows.len(), n_actions, DenseMatrix::from_rows(&rows)?)
    }

    /// Indicator features, one per pair.
    pub fn tabular(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, table: DenseMatrix::identity(n_states * n_actions) }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Φ, shape `(n_states·n_actions) × p`.
    pub fn full_matrix(&self) -> &DenseMatrix {
        &self.table
    }
}

impl FeatureMap<usize> for FiniteFeatures {
    fn dim(&self) -> usize {
        self.table.cols()
    }

    fn write(&self, state: &usize, action: usize, out: &mut [f64]) {
        out.copy_from_slice(self.table.row(state * self.n_actions + action));
    }

    fn norm_bound(&self) -> f64 {
        (0..self.table.rows())
            .map(|i| crate::linalg::dot(self.table.row(i), self.table.row(i)).sqrt())
            .fold(0.0, f64::max)
    }
}

/// Two states, actions `0 = left`, `1 = right`; right-features on the first
/// coordinate scaled by the state number, left-features on the second.
pub fn counterexample_features() -> FiniteFeatures {
    let rows = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 2.0], vec![2.0, 0.0]];
    FiniteFeatures::new(2, 2, DenseMatrix::from_rows(&rows).unwrap()).unwrap()
}

/// Baird star, actions `0 = dashed`, `1 = solid`. The solid action carries
/// `2e_i + e_8`; the dashed action carries `e_i + e_8`, which keeps Φ at
/// full column rank.
pub fn baird_features() -> FiniteFeatures {
    let mut rows = Vec::with_capacity(14);
    for i in 0..7 {
        let mut dashed = vec![0.0; 8];
        dashed[i] = 1.0;
        dashed[7] = 1.0;
        let mut solid = vec![0.0; 8];
        solid[i] = 2.0;
        solid[7] = 1.0;
        rows.push(dashed);
        rows.push(solid);
    }
    FiniteFeatures::new(7, 2, DenseMatrix::from_rows(&rows).unwrap()).unwrap()
}

/// Four hat functions over the 14-state Boyan chain peaking at states
/// 0, 4, 8 and 12; the last state copies the final peak.
pub fn boyan_features() -> FiniteFeatures {
    let peaks = [0.0, 4.0, 8.0, 12.0];
    let rows: Vec<Vec<f64>> = (0..14)
        .map(|s| {
            let x = (s as f64).min(12.0);
            peaks.iter().map(|&c| (1.0 - (x - c).abs() / 4.0).max(0.0)).collect()
        })
        .collect();
    FiniteFeatures::new(14, 1, DenseMatrix::from_rows(&rows).unwrap()).unwrap()
}

/// Hashed tile coding over (position, velocity) with per-action hashing.
#[derive(Debug, Clone, PartialEq)]
pub struct TileCoding {
    n_tilings: usize,
    tiles_per_dim: usize,
    dim: usize,
    seed: u64,
    low: [f64; 2],
    high: [f64; 2],
}

impl TileCoding {
    pub fn new(n_tilings: usize, tiles_per_dim: usize, dim: usize, seed: u64) -> Result<Self> {
        if n_tilings == 0 || tiles_per_dim == 0 || n_tilings > dim {
            return Err(Error::InvalidModel("tile coding needs at least one tiling and one tile".into()));
        }
        if !dim.is_power_of_two() || !(128..=2048).contains(&dim) {
            return Err(Error::InvalidModel(format!("feature dimension {dim} must be a power of two in [128, 2048]")));
        }
        Ok(Self {
            n_tilings,
            tiles_per_dim,
            dim,
            seed,
            low: [MountainCarState::POSITION_MIN, MountainCarState::VELOCITY_MIN],
            high: [MountainCarState::POSITION_MAX, MountainCarState::VELOCITY_MAX],
        })
    }

    pub fn n_tilings(&self) -> usize {
        self.n_tilings
    }

    /// Width of one tile in each raw coordinate.
    pub fn tile_width(&self) -> [f64; 2] {
        let t = self.tiles_per_dim as f64;
        [(self.high[0] - self.low[0]) / t, (self.high[1] - self.low[1]) / t]
    }

    /// Active indices, one per tiling. A tiling whose hash lands on an index
    /// already taken by an earlier tiling probes forward to the next free one,
    /// so the indices are distinct.
    pub fn active(&self, state: &MountainCarState, action: usize) -> Vec<usize> {
        let coords = [state.position, state.velocity];
        let t = self.tiles_per_dim as f64;
        let mut out: Vec<usize> = Vec::with_capacity(self.n_tilings);
        for tiling in 0..self.n_tilings {
            let offset = tiling as f64 / self.n_tilings as f64;
            let mut tile = [0i64; 2];
            for d in 0..2 {
                let unit = (coords[d] - self.low[d]) / (self.high[d] - self.low[d]);
                tile[d] = (unit * t + offset).floor() as i64;
            }
            let mut idx = self.hash(tiling as u64, tile[0], tile[1], action as u64);
            while out.contains(&idx) {
                idx = (idx + 1) % self.dim;
            }
            out.push(idx);
        }
        out
    }

    fn hash(&self, tiling: u64, x: i64, y: i64, action: u64) -> usize {
        const MUL: u64 = 0x9E37_79B9_7F4A_7C15;
        let mut h = self.seed ^ 0x51_7C_C1_B7_27_22_0A_95;
        for part in [tiling, x as u64, y as u64, action] {
            h = (h ^ part).wrapping_mul(MUL);
            h ^= h >> 29;
        }
        (h % self.dim as u64) as usize
    }
}

impl FeatureMap<MountainCarState> for TileCoding {
    fn dim(&self) -> usize {
        self.dim
    }

    fn write(&self, state: &MountainCarState, action: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for i in self.active(state, action) {
            out[i] = 1.0;
        }
    }

    fn norm_bound(&self) -> f64 {
        (self.n_tilings as f64).sqrt()
    }
}
