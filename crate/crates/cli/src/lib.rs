//! Experiment runner for the gqlab learners: config parsing, parallel runs,
//! CSV output and summary tables.

pub mod config;
pub mod error;
pub mod mdp_file;
pub mod output;
pub mod runner;
pub mod summary;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gqlab::env::{self, FiniteEnv};
use gqlab::features::{baird_features, boyan_features, counterexample_features, FeatureMap, FiniteFeatures};
use gqlab::mdp::ModelOracle;
use gqlab::DenseVector;

pub use config::ExperimentConfig;
pub use error::{ConfigError, RunError};
pub use runner::{Record, RunOutput};
pub use summary::Summary;

/// What a finished experiment left on disk.
#[derive(Debug)]
pub struct ExperimentReport {
    pub output_dir: PathBuf,
    pub outputs: Vec<RunOutput>,
    pub summary: Summary,
}

/// Runs every configuration of `config` and writes the per-run CSVs,
/// `aggregate.csv`, `summary.txt` and `metadata.toml`. Nothing is written
/// unless every model builds and every run completes.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, RunError> {
    run_experiment_with_workers(config, runner::worker_count())
}

/// [`run_experiment`] with an explicit worker count.
pub fn run_experiment_with_workers(
    config: &ExperimentConfig,
    workers: Option<usize>,
) -> Result<ExperimentReport, RunError> {
    let prepared = runner::prepare(config)?;
    let outputs = runner::execute(&prepared, workers)?;
    let summary = summary::summarize(&outputs);
    let dir = &config.output;
    fs::create_dir_all(dir).map_err(|e| RunError::Io(dir.clone(), e))?;
    output::write_runs(dir, &outputs)?;
    output::write_aggregate(&dir.join("aggregate.csv"), &outputs)?;
    output::write_text(&dir.join("summary.txt"), &summary.to_string())?;
    output::write_text(&dir.join("metadata.toml"), &metadata(&prepared, &outputs, workers))?;
    Ok(ExperimentReport { output_dir: dir.clone(), outputs, summary })
}

/// Loads `path`, then runs it.
pub fn run_config_file(path: &Path) -> Result<ExperimentReport, RunError> {
    run_experiment(&ExperimentConfig::load(path)?)
}

/// Re-reads a results directory and recomputes its summary.
pub fn summarize_dir(dir: &Path) -> Result<Summary, RunError> {
    Ok(summary::summarize(&output::read_runs(dir)?))
}

fn metadata(prepared: &runner::Prepared, outputs: &[RunOutput], workers: Option<usize>) -> String {
    let config = prepared.config();
    let mut s = String::new();
    let _ = writeln!(s, "name = {:?}", config.name.clone().unwrap_or_default());
    let _ = writeln!(s, "workers = {}", workers.unwrap_or_else(rayon::current_num_threads));
    let _ = writeln!(s, "ridge = {}", config.ridge.map_or("\"none\"".to_string(), |r| r.to_string()));
    let total: u128 = outputs.iter().map(|o| o.wall_ms).sum();
    let _ = writeln!(s, "total_wall_ms = {total}");
    for o in outputs {
        let _ =
            writeln!(s, "\n[[run]]\nkey = {:?}\nrun = {}\nseed = {}\nwall_ms = {}", o.key, o.run, o.seed, o.wall_ms);
    }
    s
}

/// A built-in finite problem by name, or a TOML model file.
pub fn finite_problem(name: &str) -> Result<(FiniteEnv, FiniteFeatures), ConfigError> {
    Ok(match name {
        "counterexample" => (env::counterexample_env(), counterexample_features()),
        "baird" => (env::baird_star_env(), baird_features()),
        "boyan" => (env::boyan_chain_env(), boyan_features()),
        path => mdp_file::MdpFile::load(Path::new(path))?.build()?,
    })
}

/// Text report of the closed-form quantities of a finite problem.
pub fn oracle_report(name: &str, sigma: f64, lambda: f64) -> Result<String, ConfigError> {
    if !(0.0..=1.0).contains(&sigma) || !(0.0..=1.0).contains(&lambda) {
        return Err(ConfigError::Invalid(format!("sigma {sigma} and lambda {lambda} must lie in [0,1]")));
    }
    let (fenv, features) = finite_problem(name)?;
    let oracle = ModelOracle::new(
        fenv.mdp().clone(),
        fenv.target().clone(),
        fenv.behavior().clone(),
        features.full_matrix().clone(),
        sigma,
        lambda,
    )?;
    let a = oracle.closed_form_a();
    let mut s = String::new();
    let _ = writeln!(
        s,
        "problem {} | states {} actions {} features {} | gamma {} sigma {sigma} lambda {lambda}",
        fenv.name(),
        fenv.mdp().n_states(),
        fenv.mdp().n_actions(),
        features.dim(),
        fenv.mdp().gamma()
    );
    let _ = writeln!(s, "stationary: {}", join(oracle.stationary()));
    let _ = writeln!(s, "A:");
    for i in 0..a.rows() {
        let _ = writeln!(s, "  {}", join_slice(a.row(i)));
    }
    let _ = writeln!(s, "b: {}", join(oracle.closed_form_b()));
    match oracle.td_fixed_point() {
        Ok(theta) => {
            let _ = writeln!(s, "theta*: {}", join(&theta));
        }
        Err(e) => {
            let _ = writeln!(s, "theta*: unavailable ({e})");
        }
    }
    match a.symmetric_part().symmetric_eigenvalues() {
        Ok(eig) => {
            let _ = writeln!(s, "eigenvalues of (A+A^T)/2: {}", join_slice(&eig));
            let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let _ = writeln!(s, "negative definite: {}", max < 0.0);
        }
        Err(e) => {
            let _ = writeln!(s, "eigenvalues unavailable ({e})");
        }
    }
    let zero = DenseVector::zeros(features.dim());
    let _ = writeln!(s, "mspbe(0): {:.6e}", oracle.mspbe(&zero)?);
    Ok(s)
}

fn join(v: &DenseVector) -> String {
    join_slice(v.as_slice())
}

fn join_slice(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:>12.6}")).collect::<Vec<_>>().join(" ")
}
