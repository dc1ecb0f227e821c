use serde::{Deserialize, Serialize};

use super::SimResult;

/// Day-level summary of a simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `100·|J_dist − J_cent| / J_cent` per interval where both converged.
    pub cost_deviation_pct: Vec<Option<f64>>,
    pub max_deviation_pct: f64,
    /// Largest first-step generator dispatch difference between the two
    /// solves, as a percentage of peak centralized total generation.
    pub max_generation_mismatch_pct: f64,
    /// Final consensus residual of each distributed solve.
    pub boundary_mismatch: Vec<Option<f64>>,
    pub max_boundary_mismatch: f64,
    /// Network losses over served energy.
    pub loss_fraction: f64,
    /// Energy quantities over the day, pu·h.
    pub served_energy: f64,
    pub loss_energy: f64,
    pub generated_energy: f64,
    pub virtual_energy: f64,
    pub storage_change: f64,
    pub clamped_energy: f64,
    /// Generation + VG − demand − losses − storage change − clamped energy.
    pub energy_balance_error: f64,
    pub held_intervals: usize,
    pub mean_central_iterations: Option<f64>,
    pub mean_distributed_iterations: Option<f64>,
}

/// Relative deviation in percent; when `j_cent` is zero the absolute
/// difference is returned instead.
pub fn deviation_pct(j_cent: f64, j_dist: f64) -> f64 {
    let diff = (j_dist - j_cent).abs();
    if j_cent == 0.0 {
        diff
    } else {
        100.0 * diff / j_cent.abs()
    }
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn compute_metrics(result: &SimResult) -> Metrics {
    let dt = result.dt;
    let recs = &result.intervals;
    let cost_deviation_pct: Vec<Option<f64>> = recs
        .iter()
        .map(|r| match (&r.central, &r.distributed) {
            (Some(c), Some(d)) if c.converged && d.converged => Some(deviation_pct(c.objective, d.objective)),
            _ => None,
        })
        .collect();
    let peak = recs
        .iter()
        .filter_map(|r| r.central.as_ref().filter(|c| c.converged).map(|c| c.p_gc.iter().sum::<f64>()))
        .fold(0.0, f64::max);
    let max_generation_mismatch_pct = recs
        .iter()
        .filter_map(|r| match (&r.central, &r.distributed) {
            (Some(c), Some(d)) if c.converged && d.converged && peak > 0.0 => Some(
                c.p_gc.iter().zip(&d.p_gc).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / peak * 100.0,
            ),
            _ => None,
        })
        .fold(0.0, f64::max);
    let boundary_mismatch: Vec<Option<f64>> =
        recs.iter().map(|r| r.distributed.as_ref().and_then(|d| d.consensus_residual)).collect();

    let served_energy: f64 = recs.iter().map(|r| r.demand * dt).sum();
    let loss_energy: f64 = recs.iter().map(|r| r.losses * dt).sum();
    let generated_energy: f64 = recs.iter().map(|r| r.generation * dt).sum();
    let virtual_energy: f64 = recs.iter().map(|r| r.virtual_generation * dt).sum();
    let storage_change = match (recs.first(), recs.last()) {
        (Some(a), Some(b)) => b.x_after.sum() - a.x_before.sum(),
        _ => 0.0,
    };
    let clamped_energy: f64 = recs.iter().map(|r| r.clamped).sum();
    let energy_balance_error =
        generated_energy + virtual_energy - served_energy - loss_energy - storage_change - clamped_energy;

    Metrics {
        max_deviation_pct: cost_deviation_pct.iter().flatten().copied().fold(0.0, f64::max),
        cost_deviation_pct,
        max_generation_mismatch_pct,
        max_boundary_mismatch: boundary_mismatch.iter().flatten().copied().fold(0.0, f64::max),
        boundary_mismatch,
        loss_fraction: if served_energy > 0.0 { loss_energy / served_energy } else { 0.0 },
        served_energy,
        loss_energy,
        generated_energy,
        virtual_energy,
        storage_change,
        clamped_energy,
        energy_balance_error,
        held_intervals: recs.iter().filter(|r| r.held).count(),
        mean_central_iterations: mean(recs.iter().filter_map(|r| r.central.as_ref()).map(|c| c.iterations as f64)),
        mean_distributed_iterations: mean(
            recs.iter().filter_map(|r| r.distributed.as_ref()).map(|d| d.iterations as f64),
        ),
    }
}
