//! Run-level statistics: divergence report, across-run variance and the
//! case I/II/III table.

use std::fmt::{self, Write as _};

use gqlab::evaluation::{classify_cases, mean_and_variance, CaseSummary};

use crate::output::group_by_key;
use crate::runner::{Record, RunOutput};

/// Share of the ticks, at the end of a run, that "final" scores average over.
pub const END_WINDOW: f64 = 0.1;

/// The score a configuration is judged by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Oracle MSPBE, lower is better.
    Mspbe,
    /// Episode return, higher is better.
    Return,
}

impl Metric {
    /// MSPBE when any record carries one, otherwise episode return.
    pub fn detect(outputs: &[RunOutput]) -> Self {
        let has_mspbe = outputs.iter().flat_map(|o| &o.records).any(|r| r.mspbe.is_finite());
        if has_mspbe {
            Metric::Mspbe
        } else {
            Metric::Return
        }
    }

    pub fn of(self, r: &Record) -> f64 {
        match self {
            Metric::Mspbe => r.mspbe,
            Metric::Return => r.episode_return,
        }
    }

    pub fn higher_is_better(self) -> bool {
        self == Metric::Return
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mspbe => "mspbe",
            Metric::Return => "return",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeySummary {
    pub key: String,
    pub sigma_schedule: String,
    pub step_sizes: String,
    pub runs: usize,
    pub diverged: usize,
    pub first_divergence: Option<u64>,
    /// Mean over runs of the score: the end-window mean for MSPBE, the
    /// whole-run mean for returns.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceRow {
    pub key: String,
    /// Sample variance across runs at each tick.
    pub per_tick: Vec<f64>,
    /// Sample variance across runs of each run's end-window mean.
    pub end_window: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub metric: Metric,
    pub keys: Vec<KeySummary>,
    pub variance: Option<Vec<VarianceRow>>,
    /// One table per step-size setting whose σ grid holds both extremes.
    pub cases: Vec<(String, CaseSummary)>,
}

fn finite_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.filter(|v| v.is_finite()).fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn end_window(records: &[Record]) -> &[Record] {
    let n = records.len();
    let w = ((n as f64 * END_WINDOW).ceil() as usize).clamp(1.min(n), n);
    &records[n - w..]
}

/// Score of one run under `metric`. A diverged evaluation run scores +∞.
pub fn run_score(metric: Metric, output: &RunOutput) -> f64 {
    match metric {
        Metric::Mspbe if output.diverged_at.is_some() => f64::INFINITY,
        Metric::Mspbe => finite_mean(end_window(&output.records).iter().map(|r| r.mspbe)),
        Metric::Return => finite_mean(output.records.iter().map(|r| r.episode_return)),
    }
}

/// Per-tick and end-window variance of `metric` across the runs of each
/// configuration.
pub fn summarize_variance(metric: Metric, outputs: &[RunOutput]) -> gqlab::Result<Vec<VarianceRow>> {
    group_by_key(outputs)
        .into_iter()
        .map(|group| {
            let ticks = group.iter().map(|o| o.records.len()).min().unwrap_or(0);
            let per_tick = (0..ticks)
                .map(|t| {
                    let col: Vec<f64> = group.iter().map(|o| metric.of(&o.records[t])).collect();
                    mean_and_variance(&col).map(|(_, v)| v)
                })
                .collect::<gqlab::Result<Vec<f64>>>()?;
            let finals: Vec<f64> =
                group.iter().map(|o| finite_mean(end_window(&o.records).iter().map(|r| metric.of(r)))).collect();
            let (_, end_window) = mean_and_variance(&finals)?;
            Ok(VarianceRow { key: group[0].key.clone(), per_tick, end_window })
        })
        .collect()
}

pub fn summarize(outputs: &[RunOutput]) -> Summary {
    let metric = Metric::detect(outputs);
    let keys: Vec<KeySummary> = group_by_key(outputs)
        .into_iter()
        .map(|group| {
            let first = group[0].records.first();
            KeySummary {
                key: group[0].key.clone(),
                sigma_schedule: first.map(|r| r.sigma_schedule.clone()).unwrap_or_default(),
                step_sizes: first.map(|r| r.step_sizes.clone()).unwrap_or_default(),
                runs: group.len(),
                diverged: group.iter().filter(|o| o.diverged_at.is_some()).count(),
                first_divergence: group.iter().filter_map(|o| o.diverged_at).min(),
                score: group.iter().map(|o| run_score(metric, o)).sum::<f64>() / group.len() as f64,
            }
        })
        .collect();
    let variance = summarize_variance(metric, outputs).ok();

    let mut step_labels: Vec<&str> = Vec::new();
    for k in &keys {
        if !step_labels.contains(&k.step_sizes.as_str()) {
            step_labels.push(&k.step_sizes);
        }
    }
    let cases = step_labels
        .into_iter()
        .filter_map(|label| {
            let rows: Vec<(f64, f64)> = keys
                .iter()
                .filter(|k| k.step_sizes == label)
                .filter_map(|k| k.sigma_schedule.parse::<f64>().ok().map(|s| (s, k.score)))
                .collect();
            classify_cases(&rows, metric.higher_is_better()).ok().map(|c| (label.to_string(), c))
        })
        .collect();
    Summary { metric, keys, variance, cases }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# configurations (score = {}, {})", self.metric.name(), score_note(self.metric))?;
        writeln!(f, "{:<48} {:>5} {:>9} {:>12} {:>14}", "key", "runs", "diverged", "first_div", "score")?;
        for k in &self.keys {
            let first = k.first_divergence.map_or("-".to_string(), |s| s.to_string());
            writeln!(f, "{:<48} {:>5} {:>9} {:>12} {:>14.6e}", k.key, k.runs, k.diverged, first, k.score)?;
        }
        writeln!(f)?;
        match &self.variance {
            Some(rows) => {
                writeln!(f, "# variance across runs ({})", self.metric.name())?;
                writeln!(f, "{:<48} {:>16} {:>16}", "key", "mean_tick_var", "end_window_var")?;
                for r in rows {
                    let mean_tick = finite_mean(r.per_tick.iter().copied());
                    writeln!(f, "{:<48} {:>16.6e} {:>16.6e}", r.key, mean_tick, r.end_window)?;
                }
            }
            None => writeln!(f, "# variance across runs: needs at least 2 runs per configuration")?,
        }
        for (label, cases) in &self.cases {
            writeln!(f)?;
            writeln!(f, "# cases for step sizes {label}")?;
            let mut line = String::new();
            for (sigma, case) in &cases.labels {
                let _ = write!(line, " {sigma}:{case}");
            }
            writeln!(f, "labels:{line}")?;
            writeln!(f, "I {:.1}%  II {:.1}%  III {:.1}%", cases.percent[0], cases.percent[1], cases.percent[2])?;
        }
        Ok(())
    }
}

fn score_note(metric: Metric) -> &'static str {
    match metric {
        Metric::Mspbe => "end-window mean, lower is better, diverged runs count as inf",
        Metric::Return => "mean over all episodes, higher is better",
    }
}
