//! Cross-trial statistics and the parallel experiment driver.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::Scenario;
use super::trial::{run_trial, Record, TrialTrace};
use crate::error::{Error, Result};

/// Per-logged-row mean and sample standard deviation across trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_trials: u64,
    pub rows: Vec<Record>,
    pub step_ratio_raw: Option<f64>,
    pub step_ratio: f64,
    /// Offsets `(lower, upper)` of the reference band around `v*` per agent.
    pub band: [Option<(f64, f64)>; 2],
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased (n - 1) estimator; 0 for a single sample.
fn sample_std(xs: &[f64], m: f64) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let xs: Option<Vec<f64>> = values.collect();
    xs.filter(|v| !v.is_empty()).map(|v| mean(&v))
}

/// Combines per-trial records row by row. Traces must share one row layout;
/// they are reduced in the given order.
pub fn aggregate_records(traces: &[Vec<Record>]) -> Result<Vec<Record>> {
    let first = traces
        .first()
        .ok_or_else(|| Error::Config("no trials to aggregate".into()))?;
    for t in traces {
        let same = t.len() == first.len()
            && t.iter()
                .zip(first)
                .all(|(a, b)| (a.k, a.state, a.agent) == (b.k, b.state, b.agent));
        if !same {
            return Err(Error::Structural(
                "trial traces have different row layouts".into(),
            ));
        }
    }
    Ok((0..first.len())
        .map(|r| {
            let col = |f: fn(&Record) -> Option<f64>| mean_opt(traces.iter().map(|t| f(&t[r])));
            let v: Vec<f64> = traces.iter().map(|t| t[r].v_est_mean).collect();
            let m = mean(&v);
            let base = &first[r];
            Record {
                v_est_mean: m,
                v_est_std: Some(sample_std(&v, m)),
                delta: col(|x| x.delta),
                tracking_err: col(|x| x.tracking_err),
                lyapunov: col(|x| x.lyapunov),
                ..base.clone()
            }
        })
        .collect())
}

pub fn aggregate(scenario: &Scenario, traces: &[TrialTrace]) -> Result<Aggregate> {
    let mut sorted: Vec<&TrialTrace> = traces.iter().collect();
    sorted.sort_by_key(|t| t.trial_id);
    let records: Vec<Vec<Record>> = sorted.iter().map(|t| t.rows.clone()).collect();
    Ok(Aggregate {
        n_trials: traces.len() as u64,
        rows: aggregate_records(&records)?,
        step_ratio_raw: scenario.d_raw,
        step_ratio: scenario.d,
        band: scenario.reference.band,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    /// Sorted by trial id.
    pub traces: Vec<TrialTrace>,
    pub aggregate: Aggregate,
}

/// Runs trials `0..n_trials` on `parallelism` threads (0 picks the rayon
/// default). The result does not depend on the thread count.
pub fn run_experiment(scenario: &Scenario, parallelism: usize) -> Result<ExperimentResult> {
    let ids: Vec<u64> = (0..scenario.config.n_trials).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<TrialTrace>> =
        pool.install(|| ids.par_iter().map(|&id| run_trial(scenario, id)).collect());

    let mut traces = Vec::with_capacity(results.len());
    let mut failed = Vec::new();
    let mut first_error = None;
    for (id, r) in ids.iter().zip(results) {
        match r {
            Ok(t) => traces.push(t),
            Err(e) => {
                failed.push(*id);
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(first) = first_error {
        return Err(Error::TrialsAborted {
            ids: failed,
            first: Box::new(first),
        });
    }
    let aggregate = aggregate(scenario, &traces)?;
    Ok(ExperimentResult { traces, aggregate })
}
