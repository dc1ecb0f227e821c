//! Result tables and run manifests.
//!
//! Tables are comma-separated with one header row. Floats use the shortest
//! representation that round-trips, so identical runs give identical bytes.
//! Powers are reported in kW, energies in kWh and objectives in $/h.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sim::{compute_metrics, Metrics, SimOptions, SimResult};

use super::case::CaseFile;
use super::profile::format_timestamp;

pub const INTERVALS_TABLE: &str = "intervals.csv";
pub const GENERATION_TABLE: &str = "generation.csv";
pub const DEVIATION_TABLE: &str = "deviation.csv";
pub const CONSENSUS_TABLE: &str = "consensus.csv";
pub const SUMMARY_FILE: &str = "summary.toml";
pub const MANIFEST_FILE: &str = "manifest.toml";

fn num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else {
        format!("{v}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, num)
}

fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per interval: energy flows, state and solver outcomes.
pub fn write_interval_table(path: &Path, result: &SimResult) -> Result<()> {
    let kw = result.base_kw;
    let kwh = kw;
    let rows = result.intervals.iter().map(|r| {
        vec![
            r.interval.to_string(),
            format_timestamp(r.minutes),
            r.held.to_string(),
            num(r.demand * kw),
            num(r.generation * kw),
            num(r.virtual_generation * kw),
            num(r.losses * kw),
            num(r.x_after.sum() * kwh),
            num(r.clamped * kwh),
            opt(r.central.as_ref().map(|c| c.objective)),
            r.central.as_ref().map_or_else(String::new, |c| c.iterations.to_string()),
            opt(r.distributed.as_ref().map(|d| d.objective)),
            r.distributed.as_ref().map_or_else(String::new, |d| d.iterations.to_string()),
        ]
    });
    write_table(
        path,
        &[
            "interval",
            "time",
            "held",
            "demand_kw",
            "generation_kw",
            "virtual_generation_kw",
            "losses_kw",
            "stored_kwh",
            "clamped_kwh",
            "central_objective",
            "central_iterations",
            "distributed_objective",
            "distributed_iterations",
        ],
        rows,
    )
}

/// Long-format generator profile: one row per interval and unit, with the
/// first-step dispatch of each solve and the dispatch actually applied.
pub fn write_generation_table(path: &Path, result: &SimResult) -> Result<()> {
    let kw = result.base_kw;
    let mut rows = Vec::new();
    for r in &result.intervals {
        for g in 0..r.applied.p_gc.len() {
            let pick = |s: &Option<crate::sim::SolveRecord>| opt(s.as_ref().and_then(|s| s.p_gc.get(g)).map(|p| p * kw));
            rows.push(vec![
                r.interval.to_string(),
                format_timestamp(r.minutes),
                g.to_string(),
                pick(&r.central),
                pick(&r.distributed),
                num(r.applied.p_gc[g] * kw),
                num(r.applied.q_gc[g] * kw),
            ]);
        }
    }
    write_table(
        path,
        &["interval", "time", "unit", "central_p_kw", "distributed_p_kw", "applied_p_kw", "applied_q_kvar"],
        rows,
    )
}

/// Objective pair and relative deviation per interval.
pub fn write_deviation_table(path: &Path, result: &SimResult, metrics: &Metrics) -> Result<()> {
    let rows = result.intervals.iter().zip(&metrics.cost_deviation_pct).map(|(r, dev)| {
        vec![
            r.interval.to_string(),
            format_timestamp(r.minutes),
            opt(r.central.as_ref().map(|c| c.objective)),
            opt(r.distributed.as_ref().map(|d| d.objective)),
            opt(*dev),
        ]
    });
    write_table(path, &["interval", "time", "central_objective", "distributed_objective", "deviation_pct"], rows)
}

/// Final consensus residual and iteration count of each distributed solve.
pub fn write_consensus_table(path: &Path, result: &SimResult) -> Result<()> {
    let rows = result.intervals.iter().filter_map(|r| {
        r.distributed.as_ref().map(|d| {
            vec![
                r.interval.to_string(),
                format_timestamp(r.minutes),
                d.iterations.to_string(),
                d.converged.to_string(),
                opt(d.consensus_residual),
            ]
        })
    });
    write_table(path, &["interval", "time", "iterations", "converged", "consensus_residual"], rows)
}

/// Scalar part of [`Metrics`] with energies in kWh.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub intervals: usize,
    pub max_deviation_pct: f64,
    pub max_generation_mismatch_pct: f64,
    pub max_boundary_mismatch: f64,
    pub loss_fraction: f64,
    pub served_kwh: f64,
    pub losses_kwh: f64,
    pub generated_kwh: f64,
    pub virtual_generation_kwh: f64,
    pub storage_change_kwh: f64,
    pub clamped_kwh: f64,
    pub energy_balance_error_pu_h: f64,
    pub held_intervals: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_central_iterations: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_distributed_iterations: Option<f64>,
}

impl Summary {
    pub fn new(result: &SimResult, m: &Metrics) -> Self {
        let kwh = result.base_kw;
        Self {
            intervals: result.intervals.len(),
            max_deviation_pct: m.max_deviation_pct,
            max_generation_mismatch_pct: m.max_generation_mismatch_pct,
            max_boundary_mismatch: m.max_boundary_mismatch,
            loss_fraction: m.loss_fraction,
            served_kwh: m.served_energy * kwh,
            losses_kwh: m.loss_energy * kwh,
            generated_kwh: m.generated_energy * kwh,
            virtual_generation_kwh: m.virtual_energy * kwh,
            storage_change_kwh: m.storage_change * kwh,
            clamped_kwh: m.clamped_energy * kwh,
            energy_balance_error_pu_h: m.energy_balance_error,
            held_intervals: m.held_intervals,
            mean_central_iterations: m.mean_central_iterations,
            mean_distributed_iterations: m.mean_distributed_iterations,
        }
    }
}

/// Everything needed to repeat a run: the full case with defaults filled
/// in, the simulation options and the input paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub case_path: String,
    pub profile_path: String,
    pub threads: Option<usize>,
    pub sim: SimOptions,
    pub case: CaseFile,
}

impl Manifest {
    pub fn new(command: &str, case_path: &Path, profile_path: &Path, case: &CaseFile, sim: &SimOptions) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            case_path: case_path.display().to_string(),
            profile_path: profile_path.display().to_string(),
            threads: case.aladin.threads,
            sim: sim.clone(),
            case: case.clone(),
        }
    }
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string_pretty(value).map_err(|e| Error::Input(format!("cannot serialize {}: {e}", path.display())))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    write_toml(path, manifest)
}

/// Write every table, the summary and the manifest into `dir`; returns the
/// metrics and the paths written.
pub fn write_run(dir: &Path, result: &SimResult, manifest: &Manifest) -> Result<(Metrics, Vec<PathBuf>)> {
    fs::create_dir_all(dir)?;
    let metrics = compute_metrics(result);
    let path = |name: &str| dir.join(name);
    write_interval_table(&path(INTERVALS_TABLE), result)?;
    write_generation_table(&path(GENERATION_TABLE), result)?;
    write_deviation_table(&path(DEVIATION_TABLE), result, &metrics)?;
    write_consensus_table(&path(CONSENSUS_TABLE), result)?;
    write_toml(&path(SUMMARY_FILE), &Summary::new(result, &metrics))?;
    write_manifest(&path(MANIFEST_FILE), manifest)?;
    let written = [INTERVALS_TABLE, GENERATION_TABLE, DEVIATION_TABLE, CONSENSUS_TABLE, SUMMARY_FILE, MANIFEST_FILE]
        .iter()
        .map(|n| path(n))
        .collect();
    Ok((metrics, written))
}
