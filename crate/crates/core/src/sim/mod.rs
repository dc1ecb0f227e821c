//! Receding-horizon simulation over a day of five-minute intervals.
//!
//! Every interval assembles the horizon problem from the current state and
//! forecasts, solves it centrally, distributedly or both, applies the first
//! step and advances the bus energy state with the realized disturbances.

mod metrics;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::aladin::{aladin_solve_from, WarmStart};
use crate::empc::{assemble_empc_with, EmpcProblem, Forecasts};
use crate::error::{Error, Result};
use crate::grid::{build_admittance, build_incidence, DeviceFleet, Network};
use crate::io::Case;
use crate::nlp::{IpmOptions, IpmSolver, KktPoint, StartPoint};
use crate::powerflow::{injections, VoltageState};

pub use metrics::{compute_metrics, deviation_pct, Metrics};

/// Per-interval series for one day, in per-unit. Rows are intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct DayProfile {
    /// Interval length in hours.
    pub dt: f64,
    /// Minutes after midnight of the first interval.
    pub start_minutes: u32,
    pub p_ds: DMatrix<f64>,
    pub q_ds: DMatrix<f64>,
    pub p_gs: DMatrix<f64>,
    pub p_dc: DMatrix<f64>,
    pub q_dc: DMatrix<f64>,
    pub dc_a: DMatrix<f64>,
    pub dc_b: DMatrix<f64>,
    pub dc_c: DMatrix<f64>,
}

/// Realized uncontrolled injections over one interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Disturbance {
    pub p_ds: DVector<f64>,
    pub q_ds: DVector<f64>,
    pub p_gs: DVector<f64>,
}

impl DayProfile {
    pub fn n_intervals(&self) -> usize {
        self.p_ds.nrows()
    }

    pub fn validate(&self, fleet: &DeviceFleet) -> Result<()> {
        let n = self.n_intervals();
        let shapes = [
            ("p_ds", &self.p_ds, fleet.ds.len()),
            ("q_ds", &self.q_ds, fleet.ds.len()),
            ("p_gs", &self.p_gs, fleet.gs.len()),
            ("p_dc", &self.p_dc, fleet.dc.len()),
            ("q_dc", &self.q_dc, fleet.dc.len()),
            ("dc_a", &self.dc_a, fleet.dc.len()),
            ("dc_b", &self.dc_b, fleet.dc.len()),
            ("dc_c", &self.dc_c, fleet.dc.len()),
        ];
        for (name, m, cols) in shapes {
            if m.nrows() != n || m.ncols() != cols {
                return Err(Error::Dimension(format!("profile {name} is {}x{}, expected {n}x{cols}", m.nrows(), m.ncols())));
            }
        }
        if n == 0 || !(self.dt > 0.0) {
            return Err(Error::Input("profile needs at least one interval and a positive interval length".into()));
        }
        Ok(())
    }

    pub fn realized(&self, interval: usize) -> Disturbance {
        let i = interval.min(self.n_intervals() - 1);
        Disturbance {
            p_ds: self.p_ds.row(i).transpose(),
            q_ds: self.q_ds.row(i).transpose(),
            p_gs: self.p_gs.row(i).transpose(),
        }
    }

    /// Forecast window starting at `interval`; past the end of the day the
    /// last interval is held.
    pub fn forecasts(&self, interval: usize, steps: usize) -> Forecasts {
        let last = self.n_intervals() - 1;
        let rows = |m: &DMatrix<f64>| DMatrix::from_fn(steps, m.ncols(), |k, d| m[((interval + k).min(last), d)]);
        Forecasts {
            p_ds_hat: rows(&self.p_ds),
            q_ds_hat: rows(&self.q_ds),
            p_gs_hat: rows(&self.p_gs),
            p_dc_hat: rows(&self.p_dc),
            q_dc_hat: rows(&self.q_dc),
            dc_cost_a: rows(&self.dc_a),
            dc_cost_b: rows(&self.dc_b),
            dc_cost_c: rows(&self.dc_c),
        }
    }

    /// Forecasts with multiplicative Gaussian error of relative standard
    /// deviation `noise` on every step after the first. The draw depends only
    /// on `seed` and `interval`.
    pub fn noisy_forecasts(&self, interval: usize, steps: usize, noise: f64, seed: u64) -> Forecasts {
        let mut f = self.forecasts(interval, steps);
        if noise <= 0.0 {
            return f;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (interval as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let normal = Normal::new(0.0, noise).expect("finite positive deviation");
        for k in 1..steps {
            for m in [&mut f.p_ds_hat, &mut f.q_ds_hat, &mut f.p_gs_hat] {
                for d in 0..m.ncols() {
                    let e: f64 = normal.sample(&mut rng);
                    m[(k, d)] = (m[(k, d)] * (1.0 + e)).max(0.0);
                }
            }
        }
        f.p_dc_hat = f.p_dc_hat.map(|v| v.max(0.0));
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    Centralized,
    Distributed,
    #[default]
    Both,
}

impl SimMode {
    pub fn runs_central(self) -> bool {
        matches!(self, Self::Centralized | Self::Both)
    }

    pub fn runs_distributed(self) -> bool {
        matches!(self, Self::Distributed | Self::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimOptions {
    pub mode: SimMode,
    /// Tolerance of the centralized interior-point solve.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative standard deviation of forecast error (0 means perfect).
    pub forecast_noise: f64,
    pub seed: u64,
    /// Start each interval from the previous solution shifted by one step.
    pub warm_start: bool,
    /// Simulate only the first intervals of the profile.
    pub max_intervals: Option<usize>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            mode: SimMode::Both,
            tol: 1e-8,
            max_iter: 200,
            forecast_noise: 0.0,
            seed: 0,
            warm_start: true,
            max_intervals: None,
        }
    }
}

/// First-step controls and the voltages they produce.
#[derive(Debug, Clone, PartialEq)]
pub struct Applied {
    pub p_gc: DVector<f64>,
    pub q_gc: DVector<f64>,
    pub p_vg: DVector<f64>,
    pub q_vg: DVector<f64>,
    pub voltage: VoltageState,
}

impl Applied {
    fn from_solution(problem: &EmpcProblem, point: &DVector<f64>) -> Self {
        let tr = problem.trajectory(point);
        let row = |m: &DMatrix<f64>| m.row(0).transpose();
        Self {
            p_gc: row(&tr.p_gc),
            q_gc: row(&tr.q_gc),
            p_vg: row(&tr.p_vg),
            q_vg: row(&tr.q_vg),
            voltage: VoltageState { magnitude: row(&tr.vm), angle: row(&tr.va) },
        }
    }
}

/// Outcome of integrating one interval.
#[derive(Debug, Clone, PartialEq)]
pub struct StateUpdate {
    pub x: DVector<f64>,
    /// Energy removed by clamping, per bus (pu·h, unclamped minus clamped).
    pub clamped: DVector<f64>,
    /// Network losses `Σ_b p_inj(b)` at the applied voltages (pu).
    pub losses: f64,
}

/// Advance the bus energy state over one interval.
pub fn integrate_state(
    network: &Network,
    fleet: &DeviceFleet,
    x: &DVector<f64>,
    applied: &Applied,
    realized: &Disturbance,
    dt: f64,
) -> Result<StateUpdate> {
    let n = network.n_bus();
    if x.len() != n || applied.voltage.len() != n {
        return Err(Error::Dimension(format!(
            "state has {} entries and voltage {}, network has {n} buses",
            x.len(),
            applied.voltage.len()
        )));
    }
    let inc = build_incidence(fleet, network)?;
    if applied.p_gc.len() != inc.gc.ncols()
        || applied.p_vg.len() != inc.dc.ncols()
        || realized.p_gs.len() != inc.gs.ncols()
        || realized.p_ds.len() != inc.ds.ncols()
    {
        return Err(Error::Dimension("applied controls or disturbances do not match the fleet".into()));
    }
    let y = build_admittance(network)?;
    let inj = injections(&applied.voltage, &y)?;
    let net = &inc.gc * &applied.p_gc + &inc.gs * &realized.p_gs + &inc.dc * &applied.p_vg
        - &inc.ds * &realized.p_ds
        - &inj.p_inj;
    let raw = x + net * dt;
    let clamped_x = DVector::from_fn(n, |b, _| raw[b].clamp(network.buses[b].x_min, network.buses[b].x_max));
    Ok(StateUpdate { clamped: &raw - &clamped_x, x: clamped_x, losses: inj.p_inj.sum() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final consensus residual (distributed solves only).
    pub consensus_residual: Option<f64>,
    /// First-step generator dispatch of this solve.
    pub p_gc: Vec<f64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalRecord {
    pub interval: usize,
    pub minutes: u32,
    pub applied: Applied,
    /// Whether the previous dispatch was held because the solve failed.
    pub held: bool,
    pub x_before: DVector<f64>,
    pub x_after: DVector<f64>,
    /// State after the first step as predicted by the applied solution.
    pub x_predicted: Option<DVector<f64>>,
    pub clamped: f64,
    pub losses: f64,
    pub demand: f64,
    pub generation: f64,
    pub virtual_generation: f64,
    pub central: Option<SolveRecord>,
    pub distributed: Option<SolveRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub mode: SimMode,
    pub dt: f64,
    pub base_kw: f64,
    pub intervals: Vec<IntervalRecord>,
}

fn shift_multipliers(lambda: &DVector<f64>, steps: usize) -> DVector<f64> {
    let per_step = lambda.len() / steps.max(1);
    let mut out = lambda.clone();
    for k in 0..steps.saturating_sub(1) {
        out.rows_mut(k * per_step, per_step).copy_from(&lambda.rows((k + 1) * per_step, per_step));
    }
    out
}

/// Run the receding-horizon loop over `day`.
pub fn run_mpc(case: &Case, day: &DayProfile, options: &SimOptions) -> Result<SimResult> {
    day.validate(&case.fleet)?;
    let n_int = options.max_intervals.map_or(day.n_intervals(), |m| m.min(day.n_intervals()));
    let steps = case.horizon.steps;
    let dt = case.horizon.dt;
    if (dt - day.dt).abs() > 1e-12 {
        return Err(Error::Input(format!("case step {dt} h differs from profile interval {} h", day.dt)));
    }

    let mut x = case.x0.clone();
    let mut prev_applied: Option<Applied> = None;
    let mut prev_central: Option<KktPoint> = None;
    let mut prev_dist: Option<(DVector<f64>, DVector<f64>)> = None;
    let mut intervals = Vec::with_capacity(n_int);

    for i in 0..n_int {
        let forecasts = day.noisy_forecasts(i, steps, options.forecast_noise, options.seed);
        let anchor = prev_applied.as_ref().map(|a| a.p_gc.clone());
        let problem =
            assemble_empc_with(&case.network, &case.fleet, &forecasts, case.horizon, &x, anchor.as_ref(), case.empc)?;

        let mut central = None;
        let mut central_point = None;
        if options.mode.runs_central() {
            let start = match (&prev_central, options.warm_start) {
                (Some(p), true) => StartPoint::primal(problem.shifted_start(&p.primal)),
                _ => StartPoint::primal(problem.flat_start()),
            };
            let solver = IpmSolver::new(IpmOptions { tol: options.tol, max_iter: options.max_iter, ..IpmOptions::default() });
            let sol = solver.solve(&problem, &start);
            let rec = SolveRecord {
                objective: sol.objective,
                iterations: sol.iterations,
                converged: sol.is_converged(),
                consensus_residual: None,
                p_gc: problem.trajectory(&sol.primal).p_gc.row(0).iter().copied().collect(),
                message: sol.message.clone(),
            };
            if rec.converged {
                central_point = Some(sol.primal.clone());
                prev_central = Some(sol);
            } else {
                warn!("interval {i}: centralized solve failed: {}", rec.message);
            }
            central = Some(rec);
        }

        let mut distributed = None;
        let mut dist_point = None;
        if options.mode.runs_distributed() {
            let warm = match (&prev_dist, options.warm_start) {
                (Some((z, l)), true) => {
                    WarmStart { z: problem.shifted_start(z), lambda: Some(shift_multipliers(l, steps)) }
                }
                _ => WarmStart { z: problem.flat_start(), lambda: None },
            };
            match aladin_solve_from(&problem, &case.partition, &case.aladin, &warm) {
                Ok(sol) => {
                    let rec = SolveRecord {
                        objective: sol.objective,
                        iterations: sol.iterations,
                        converged: sol.converged,
                        consensus_residual: Some(sol.consensus_residual),
                        p_gc: problem.trajectory(&sol.primal).p_gc.row(0).iter().copied().collect(),
                        message: if sol.converged { String::new() } else { "iteration limit reached".into() },
                    };
                    if sol.converged {
                        dist_point = Some(sol.primal.clone());
                        prev_dist = Some((sol.primal, sol.lambda));
                    } else {
                        warn!("interval {i}: distributed solve did not converge");
                    }
                    distributed = Some(rec);
                }
                Err(e) => {
                    warn!("interval {i}: distributed solve failed: {e}");
                    distributed = Some(SolveRecord {
                        objective: f64::NAN,
                        iterations: 0,
                        converged: false,
                        consensus_residual: None,
                        p_gc: Vec::new(),
                        message: e.to_string(),
                    });
                }
            }
        }

        let chosen = if options.mode.runs_distributed() { dist_point } else { central_point };
        let (applied, held, x_predicted) = match chosen {
            Some(p) => {
                let predicted = problem.trajectory(&p).x.row(0).transpose();
                (Applied::from_solution(&problem, &p), false, Some(predicted))
            }
            None => match &prev_applied {
                Some(a) => (a.clone(), true, None),
                None => return Err(Error::Input(format!("interval {i}: no solution and no previous dispatch to hold"))),
            },
        };

        let realized = day.realized(i);
        let update = integrate_state(&case.network, &case.fleet, &x, &applied, &realized, dt)?;
        let record = IntervalRecord {
            interval: i,
            minutes: day.start_minutes + (i as f64 * dt * 60.0).round() as u32,
            held,
            x_before: x.clone(),
            x_after: update.x.clone(),
            x_predicted,
            clamped: update.clamped.sum(),
            losses: update.losses,
            demand: realized.p_ds.sum(),
            generation: applied.p_gc.sum() + realized.p_gs.sum(),
            virtual_generation: applied.p_vg.sum(),
            central,
            distributed,
            applied: applied.clone(),
        };
        if i % 24 == 0 {
            info!("interval {i}/{n_int}: losses {:.4} pu, held {held}", update.losses);
        }
        intervals.push(record);
        x = update.x;
        prev_applied = Some(applied);
    }
    Ok(SimResult { mode: options.mode, dt, base_kw: case.network.base_kw(), intervals })
}
