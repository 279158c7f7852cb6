//! CSV layout: one file per run under `runs/`, an `aggregate.csv` with
//! across-run means and sample variances per record index, a plain-text
//! `summary.txt`, and `metadata.toml` for anything non-deterministic.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::RunError;
use crate::runner::{fmt_float, Record, RunOutput};

pub const RUN_HEADER: [&str; 15] = [
    "run",
    "seed",
    "sigma_schedule",
    "step_sizes",
    "episode",
    "step",
    "sigma",
    "mspbe",
    "empirical_mspbe",
    "episode_return",
    "episode_length",
    "theta_norm",
    "omega_norm",
    "diverged",
    "theta",
];

pub const AGGREGATE_HEADER: [&str; 20] = [
    "sigma_schedule",
    "step_sizes",
    "tick",
    "episode",
    "step",
    "n",
    "sigma_mean",
    "mspbe_mean",
    "mspbe_var",
    "empirical_mspbe_mean",
    "empirical_mspbe_var",
    "return_mean",
    "return_var",
    "length_mean",
    "length_var",
    "theta_norm_mean",
    "theta_norm_var",
    "omega_norm_mean",
    "omega_norm_var",
    "diverged_fraction",
];

pub const RUNS_DIR: &str = "runs";

pub fn run_file(root: &Path, output: &RunOutput) -> PathBuf {
    root.join(RUNS_DIR)
        .join(format!("{:02}_{}", output.key_index, output.key))
        .join(format!("run_{:03}.csv", output.run))
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |e| RunError::Io(path.to_path_buf(), e)
}

pub fn write_runs(root: &Path, outputs: &[RunOutput]) -> Result<(), RunError> {
    let runs = root.join(RUNS_DIR);
    if runs.exists() {
        fs::remove_dir_all(&runs).map_err(io(&runs))?;
    }
    for output in outputs {
        let path = run_file(root, output);
        let dir = path.parent().expect("run file has a parent");
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(RUN_HEADER)?;
        for r in &output.records {
            w.write_record(record_fields(r))?;
        }
        w.flush().map_err(io(&path))?;
    }
    Ok(())
}

fn record_fields(r: &Record) -> [String; 15] {
    [
        r.run.to_string(),
        r.seed.to_string(),
        r.sigma_schedule.clone(),
        r.step_sizes.clone(),
        r.episode.to_string(),
        r.step.to_string(),
        fmt_float(r.sigma),
        fmt_float(r.mspbe),
        fmt_float(r.empirical_mspbe),
        fmt_float(r.episode_return),
        fmt_float(r.episode_length),
        fmt_float(r.theta_norm),
        fmt_float(r.omega_norm),
        u8::from(r.diverged).to_string(),
        r.theta.clone(),
    ]
}

/// Mean and sample variance; the variance is NaN below two values.
fn mean_var(values: &[f64]) -> (f64, f64) {
    match gqlab::evaluation::mean_and_variance(values) {
        Ok(mv) => mv,
        Err(_) => (values.first().copied().unwrap_or(f64::NAN), f64::NAN),
    }
}

/// Groups outputs by configuration, preserving order.
pub fn group_by_key(outputs: &[RunOutput]) -> Vec<&[RunOutput]> {
    outputs.chunk_by(|a, b| a.key_index == b.key_index).collect()
}

pub fn write_aggregate(path: &Path, outputs: &[RunOutput]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(AGGREGATE_HEADER)?;
    for group in group_by_key(outputs) {
        let ticks = group.iter().map(|o| o.records.len()).max().unwrap_or(0);
        for tick in 0..ticks {
            let rows: Vec<&Record> = group.iter().filter_map(|o| o.records.get(tick)).collect();
            let first = rows[0];
            let col = |f: fn(&Record) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let mut fields = vec![
                first.sigma_schedule.clone(),
                first.step_sizes.clone(),
                tick.to_string(),
                first.episode.to_string(),
                first.step.to_string(),
                rows.len().to_string(),
                fmt_float(mean_var(&col(|r| r.sigma)).0),
            ];
            for f in [
                (|r: &Record| r.mspbe) as fn(&Record) -> f64,
                |r| r.empirical_mspbe,
                |r| r.episode_return,
                |r| r.episode_length,
                |r| r.theta_norm,
                |r| r.omega_norm,
            ] {
                let (m, v) = mean_var(&col(f));
                fields.push(fmt_float(m));
                fields.push(fmt_float(v));
            }
            let diverged = rows.iter().filter(|r| r.diverged).count() as f64 / rows.len() as f64;
            fields.push(fmt_float(diverged));
            w.write_record(&fields)?;
        }
    }
    w.flush().map_err(io(path))?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), RunError> {
    fs::write(path, text).map_err(io(path))
}

/// Reads back every per-run CSV under `root/runs`, ordered by path.
pub fn read_runs(root: &Path) -> Result<Vec<RunOutput>, RunError> {
    let runs = root.join(RUNS_DIR);
    let mut dirs: Vec<PathBuf> = fs::read_dir(&runs)
        .map_err(io(&runs))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut outputs = Vec::new();
    for (key_index, dir) in dirs.iter().enumerate() {
        let key = dir
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.split_once('_').map(|(_, k)| k.to_string()))
            .ok_or_else(|| RunError::Malformed(dir.clone(), "unexpected directory name".into()))?;
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        for file in files {
            let records = read_run_file(&file)?;
            let run = records.first().map_or(0, |r| r.run);
            let seed = records.first().map_or(0, |r| r.seed);
            let diverged_at = records.iter().find(|r| r.diverged).map(|r| r.step);
            outputs.push(RunOutput { key_index, key: key.clone(), run, seed, records, diverged_at, wall_ms: 0 });
        }
    }
    if outputs.is_empty() {
        return Err(RunError::Malformed(runs, "no run files found".into()));
    }
    Ok(outputs)
}

fn read_run_file(path: &Path) -> Result<Vec<Record>, RunError> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    if header.iter().ne(RUN_HEADER.iter().copied()) {
        return Err(RunError::Malformed(path.to_path_buf(), "header does not match the run schema".into()));
    }
    let bad = |what: &str| RunError::Malformed(path.to_path_buf(), format!("cannot parse {what}"));
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let num = |i: usize| row[i].parse::<f64>().map_err(|_| bad(RUN_HEADER[i]));
        let int = |i: usize| row[i].parse::<u64>().map_err(|_| bad(RUN_HEADER[i]));
        records.push(Record {
            run: int(0)? as usize,
            seed: int(1)?,
            sigma_schedule: row[2].to_string(),
            step_sizes: row[3].to_string(),
            episode: int(4)?,
            step: int(5)?,
            sigma: num(6)?,
            mspbe: num(7)?,
            empirical_mspbe: num(8)?,
            episode_return: num(9)?,
            episode_length: num(10)?,
            theta_norm: num(11)?,
            omega_norm: num(12)?,
            diverged: int(13)? != 0,
            theta: row[14].to_string(),
        });
    }
    Ok(records)
}
