use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_schemes, Axis, RunConfig, TrialResult};
use crate::error::{Error, Result};
use crate::offload::Scheme;

/// One line of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep_value: f64,
    pub scheme: String,
    pub mean_latency_s: f64,
    pub stderr_s: f64,
    pub n_trials: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    /// Every trial, ordered by sweep value, scheme, then seed.
    pub trials: Vec<(f64, TrialResult)>,
}

/// Mean and standard error over the non-failed trials.
pub fn summarize(value: f64, scheme: Scheme, trials: &[&TrialResult]) -> SweepRow {
    let ok: Vec<f64> = trials.iter().filter(|r| !r.failed()).map(|r| r.max_latency()).collect();
    let n = ok.len();
    let (mean, stderr) = mean_stderr(&ok);
    SweepRow {
        sweep_value: value,
        scheme: scheme.name().into(),
        mean_latency_s: mean,
        stderr_s: stderr,
        n_trials: trials.len(),
        n_failed: trials.len() - n,
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Runs `schemes` over `trials` shared seeds at every sweep point.
pub fn monte_carlo(cfg: &RunConfig, axis: Axis, values: &[f64], schemes: &[Scheme], trials: usize) -> Result<SweepOutput> {
    let configs: Vec<RunConfig> = values.iter().map(|&v| axis.apply(cfg, v)).collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> =
        (0..values.len()).flat_map(|i| (0..trials as u64).map(move |t| (i, cfg.run.seed + t))).collect();
    let mut results: Vec<(usize, TrialResult)> = jobs
        .par_iter()
        .flat_map_iter(|&(i, seed)| run_schemes(&configs[i], seed, schemes).into_iter().map(move |r| (i, r)))
        .collect();
    let order = |s: Scheme| Scheme::ALL.iter().position(|&x| x == s);
    results.sort_by_key(|(i, r)| (*i, order(r.scheme), r.seed));

    let mut rows = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        for &s in Scheme::ALL.iter().filter(|s| schemes.contains(s)) {
            let group: Vec<&TrialResult> = results.iter().filter(|(j, r)| *j == i && r.scheme == s).map(|(_, r)| r).collect();
            rows.push(summarize(v, s, &group));
        }
    }
    let trials = results.into_iter().map(|(i, r)| (values[i], r)).collect();
    Ok(SweepOutput { rows, trials })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv { path: path.into(), source }
}

/// Writes the sweep table.
pub fn emit_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    if rows.is_empty() {
        w.write_record(["sweep_value", "scheme", "mean_latency_s", "stderr_s", "n_trials", "n_failed"])
            .map_err(csv_err(path))?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| Error::Io { path: path.into(), source })
}

pub fn read_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err(path))
}

/// Writes outer objective traces as `seed, iteration, objective_s`.
pub fn emit_trace_csv(trials: &[&TrialResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["seed", "iteration", "objective_s"]).map_err(csv_err(path))?;
    for r in trials {
        for (i, obj) in r.trace.iter().enumerate() {
            w.write_record([r.seed.to_string(), i.to_string(), format!("{obj:e}")]).map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(|source| Error::Io { path: path.into(), source })
}
