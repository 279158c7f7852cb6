//! Gradient Q(σ,λ) with linear function approximation.
//!
//! The crate is organized bottom-up: [`linalg`] holds the dense kernels,
//! [`mdp`] the finite models and their closed-form oracles, [`env`] and
//! [`features`] the benchmark problems, [`learners`] the update rules and
//! [`evaluation`] the sample statistics used to judge runs.

pub mod env;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod learners;
pub mod linalg;
pub mod mdp;
pub mod rollout;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, DenseVector};
