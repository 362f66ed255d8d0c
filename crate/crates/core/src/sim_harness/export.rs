//! CSV and JSON persistence of records and run directories.

use std::fs;
use std::path::{Path, PathBuf};

use super::aggregate::ExperimentResult;
use super::config::Scenario;
use super::plot::render_plot;
use super::trial::Record;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

/// Writes records with columns `k, state, agent, v_est_mean, v_est_std,
/// v_star, bound_lo, bound_hi, delta, tracking_err, lyapunov`. Missing values
/// are empty CSV fields or JSON nulls; floats use the shortest decimal form
/// that reads back to the same value.
pub fn export(records: &[Record], format: Format, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    match format {
        Format::Csv => {
            let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = csv::Writer::from_writer(file);
            for r in records {
                w.serialize(r)?;
            }
            if records.is_empty() {
                w.write_record(RECORD_COLUMNS)?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
        Format::Json => {
            let text = serde_json::to_string_pretty(records).map_err(|e| Error::json(path, e))?;
            fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
        }
    }
}

pub const RECORD_COLUMNS: [&str; 11] = [
    "k",
    "state",
    "agent",
    "v_est_mean",
    "v_est_std",
    "v_star",
    "bound_lo",
    "bound_hi",
    "delta",
    "tracking_err",
    "lyapunov",
];

pub fn import(format: Format, path: &Path) -> Result<Vec<Record>> {
    match format {
        Format::Csv => {
            let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                other => Error::Config(format!("{}: {other:?}", path.display())),
            })?;
            r.deserialize().map(|x| x.map_err(Error::from)).collect()
        }
        Format::Json => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))
        }
    }
}

pub fn trial_csv_path(out: &Path, trial_id: u64) -> PathBuf {
    out.join("trials").join(format!("trial_{trial_id}.csv"))
}

/// Writes `run.json`, `trials/trial_<id>.csv`, `aggregate.csv` and `plot.svg` under `out`.
pub fn write_run_dir(out: &Path, scenario: &Scenario, result: &ExperimentResult) -> Result<()> {
    fs::create_dir_all(out.join("trials")).map_err(|e| Error::io(out, e))?;
    scenario.config.save(&out.join("run.json"))?;
    for t in &result.traces {
        export(&t.rows, Format::Csv, &trial_csv_path(out, t.trial_id))?;
    }
    export(
        &result.aggregate.rows,
        Format::Csv,
        &out.join("aggregate.csv"),
    )?;
    render_plot(
        &result.aggregate.rows,
        &scenario.labels(),
        &out.join("plot.svg"),
        true,
    )
}
