//! Multi-period economic MPC formulation of the AC optimal power flow.
//!
//! Decision variables per step `k`:
//! `[P_GC; Q_GC; P_VG; Q_VG; |V|; ∠V; x(k+1)]`, flattened over the horizon.
//! Each step contributes one energy-state update and one reactive balance per
//! bus, plus the reference-angle equality. Ramp limits and the reactive
//! virtual-generation power factor are linear rows; everything else is a
//! variable bound.

mod region;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{validate_network, DeviceFleet, Network};
use crate::nlp::{LinearRow, NlpInstance};

pub use region::{Region, RowKind, RowLabel, StepLayout, TieLine};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonConfig {
    pub steps: usize,
    /// Step length in hours.
    pub dt: f64,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        Self { steps: 5, dt: 5.0 / 60.0 }
    }
}

/// How the reactive part of virtual generation is modelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReactiveVg {
    /// `Q_VG = P_VG · q̂_DC / p̂_DC` (zero where `p̂_DC = 0`).
    #[default]
    PowerFactor,
    /// `Q_VG` is free between zero and the capacity fraction of `q̂_DC`.
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EmpcOptions {
    pub reactive_vg: ReactiveVg,
}

/// Horizon forecasts, one row per step, in per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecasts {
    pub p_ds_hat: DMatrix<f64>,
    pub q_ds_hat: DMatrix<f64>,
    pub p_gs_hat: DMatrix<f64>,
    pub p_dc_hat: DMatrix<f64>,
    pub q_dc_hat: DMatrix<f64>,
    pub dc_cost_a: DMatrix<f64>,
    pub dc_cost_b: DMatrix<f64>,
    pub dc_cost_c: DMatrix<f64>,
}

impl Forecasts {
    /// All-zero forecasts of the right shape.
    pub fn zeros(steps: usize, fleet: &DeviceFleet) -> Self {
        let (nds, ngs, ndc) = (fleet.ds.len(), fleet.gs.len(), fleet.dc.len());
        Self {
            p_ds_hat: DMatrix::zeros(steps, nds),
            q_ds_hat: DMatrix::zeros(steps, nds),
            p_gs_hat: DMatrix::zeros(steps, ngs),
            p_dc_hat: DMatrix::zeros(steps, ndc),
            q_dc_hat: DMatrix::zeros(steps, ndc),
            dc_cost_a: DMatrix::zeros(steps, ndc),
            dc_cost_b: DMatrix::zeros(steps, ndc),
            dc_cost_c: DMatrix::zeros(steps, ndc),
        }
    }

    pub fn steps(&self) -> usize {
        self.p_ds_hat.nrows()
    }

    /// Check shapes against a fleet and horizon, and sign conventions.
    pub fn validate(&self, steps: usize, fleet: &DeviceFleet) -> Result<()> {
        let shapes = [
            ("p_ds_hat", &self.p_ds_hat, fleet.ds.len()),
            ("q_ds_hat", &self.q_ds_hat, fleet.ds.len()),
            ("p_gs_hat", &self.p_gs_hat, fleet.gs.len()),
            ("p_dc_hat", &self.p_dc_hat, fleet.dc.len()),
            ("q_dc_hat", &self.q_dc_hat, fleet.dc.len()),
            ("dc_cost_a", &self.dc_cost_a, fleet.dc.len()),
            ("dc_cost_b", &self.dc_cost_b, fleet.dc.len()),
            ("dc_cost_c", &self.dc_cost_c, fleet.dc.len()),
        ];
        for (name, m, cols) in shapes {
            if m.nrows() != steps || m.ncols() != cols {
                return Err(Error::Dimension(format!(
                    "{name} is {}x{}, expected {steps}x{cols}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!("{name} contains a non-finite value")));
            }
        }
        for (name, m) in [("p_ds_hat", &self.p_ds_hat), ("p_gs_hat", &self.p_gs_hat), ("p_dc_hat", &self.p_dc_hat)] {
            if m.iter().any(|&v| v < 0.0) {
                return Err(Error::Input(format!("{name} has a negative entry")));
            }
        }
        if self.dc_cost_a.iter().any(|&v| v < 0.0) {
            return Err(Error::Input("dc_cost_a has a negative entry".into()));
        }
        Ok(())
    }
}

/// `Σ_k Σ_g c2·P² + c1·P + c0` for a `T × n_gc` dispatch.
pub fn generation_cost(p_gc: &DMatrix<f64>, fleet: &DeviceFleet) -> Result<f64> {
    if p_gc.ncols() != fleet.gc.len() {
        return Err(Error::Dimension(format!("{} generator columns for {} units", p_gc.ncols(), fleet.gc.len())));
    }
    let mut total = 0.0;
    for k in 0..p_gc.nrows() {
        for (g, u) in fleet.gc.iter().enumerate() {
            let p = p_gc[(k, g)];
            total += u.c2 * p * p + u.c1 * p + u.c0;
        }
    }
    Ok(total)
}

/// `Σ_k Σ_d a·P_VG² + b·P_VG + c` with step-dependent coefficients.
pub fn virtual_gen_cost(p_vg: &DMatrix<f64>, forecasts: &Forecasts) -> Result<f64> {
    if p_vg.shape() != forecasts.dc_cost_a.shape() {
        return Err(Error::Dimension(format!(
            "virtual generation is {:?}, cost coefficients are {:?}",
            p_vg.shape(),
            forecasts.dc_cost_a.shape()
        )));
    }
    let mut total = 0.0;
    for k in 0..p_vg.nrows() {
        for d in 0..p_vg.ncols() {
            let p = p_vg[(k, d)];
            total += forecasts.dc_cost_a[(k, d)] * p * p + forecasts.dc_cost_b[(k, d)] * p + forecasts.dc_cost_c[(k, d)];
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VgCapacity {
    pub p_vg_max: DVector<f64>,
    pub q_vg_max: DVector<f64>,
}

/// Curtailment capacity at step `k`: the device's capacity fraction of its
/// controllable-demand forecast.
pub fn vg_capacity(forecasts: &Forecasts, fleet: &DeviceFleet, k: usize) -> Result<VgCapacity> {
    if k >= forecasts.steps() {
        return Err(Error::Dimension(format!("step {k} beyond horizon of {}", forecasts.steps())));
    }
    let n = fleet.dc.len();
    Ok(VgCapacity {
        p_vg_max: DVector::from_fn(n, |d, _| fleet.dc[d].capacity_fraction * forecasts.p_dc_hat[(k, d)]),
        q_vg_max: DVector::from_fn(n, |d, _| fleet.dc[d].capacity_fraction * forecasts.q_dc_hat[(k, d)]),
    })
}

/// Borrowed inputs shared by the centralized problem and area regions.
#[derive(Debug, Clone, Copy)]
pub struct EmpcInputs<'a> {
    pub network: &'a Network,
    pub fleet: &'a DeviceFleet,
    pub forecasts: &'a Forecasts,
    pub horizon: HorizonConfig,
    pub x0: &'a DVector<f64>,
    pub p_gc_prev: Option<&'a DVector<f64>>,
    pub options: EmpcOptions,
}

/// The assembled multi-period problem over the whole network.
#[derive(Debug, Clone)]
pub struct EmpcProblem {
    pub network: Network,
    pub fleet: DeviceFleet,
    pub forecasts: Forecasts,
    pub horizon: HorizonConfig,
    pub x0: DVector<f64>,
    pub p_gc_prev: Option<DVector<f64>>,
    pub options: EmpcOptions,
    region: Region,
}

pub fn assemble_empc(
    network: &Network,
    fleet: &DeviceFleet,
    forecasts: &Forecasts,
    horizon: HorizonConfig,
    x0: &DVector<f64>,
    p_gc_prev: Option<&DVector<f64>>,
) -> Result<EmpcProblem> {
    assemble_empc_with(network, fleet, forecasts, horizon, x0, p_gc_prev, EmpcOptions::default())
}

pub fn assemble_empc_with(
    network: &Network,
    fleet: &DeviceFleet,
    forecasts: &Forecasts,
    horizon: HorizonConfig,
    x0: &DVector<f64>,
    p_gc_prev: Option<&DVector<f64>>,
    options: EmpcOptions,
) -> Result<EmpcProblem> {
    if horizon.steps == 0 || !(horizon.dt > 0.0) {
        return Err(Error::Input(format!("horizon needs steps ≥ 1 and dt > 0, got {} and {}", horizon.steps, horizon.dt)));
    }
    let diags = validate_network(network, fleet);
    if !diags.is_empty() {
        return Err(Error::Validation(diags.iter().map(|d| d.to_string()).collect()));
    }
    forecasts.validate(horizon.steps, fleet)?;
    let n = network.n_bus();
    if x0.len() != n {
        return Err(Error::Dimension(format!("x0 has {} entries for {n} buses", x0.len())));
    }
    for (b, bus) in network.buses.iter().enumerate() {
        if !(x0[b] >= bus.x_min - 1e-12 && x0[b] <= bus.x_max + 1e-12) {
            return Err(Error::Input(format!("x0[{b}] = {} outside [{}, {}]", x0[b], bus.x_min, bus.x_max)));
        }
    }
    if let Some(p) = p_gc_prev {
        if p.len() != fleet.gc.len() {
            return Err(Error::Dimension(format!("previous dispatch has {} entries for {} units", p.len(), fleet.gc.len())));
        }
    }
    let inputs = EmpcInputs { network, fleet, forecasts, horizon, x0, p_gc_prev, options };
    let all: Vec<usize> = (0..n).collect();
    let region = Region::build(&inputs, &all)?;
    Ok(EmpcProblem {
        network: network.clone(),
        fleet: fleet.clone(),
        forecasts: forecasts.clone(),
        horizon,
        x0: x0.clone(),
        p_gc_prev: p_gc_prev.cloned(),
        options,
        region,
    })
}

/// Per-step trajectories of a solution, one row per step.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpcTrajectory {
    pub p_gc: DMatrix<f64>,
    pub q_gc: DMatrix<f64>,
    pub p_vg: DMatrix<f64>,
    pub q_vg: DMatrix<f64>,
    pub vm: DMatrix<f64>,
    pub va: DMatrix<f64>,
    /// State after each step.
    pub x: DMatrix<f64>,
}

impl EmpcProblem {
    pub fn inputs(&self) -> EmpcInputs<'_> {
        EmpcInputs {
            network: &self.network,
            fleet: &self.fleet,
            forecasts: &self.forecasts,
            horizon: self.horizon,
            x0: &self.x0,
            p_gc_prev: self.p_gc_prev.as_ref(),
            options: self.options,
        }
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn layout(&self) -> StepLayout {
        self.region.layout
    }

    pub fn steps(&self) -> usize {
        self.horizon.steps
    }

    pub fn n_vars(&self) -> usize {
        self.region.n_vars()
    }

    pub fn n_eqs(&self) -> usize {
        self.region.n_eqs()
    }

    pub fn row_labels(&self) -> Vec<RowLabel> {
        self.region.row_labels()
    }

    pub fn flat_start(&self) -> DVector<f64> {
        self.region.flat_start()
    }

    pub fn ramp_rows(&self) -> Vec<LinearRow> {
        self.region.ramp_rows()
    }

    pub fn trajectory(&self, point: &DVector<f64>) -> EmpcTrajectory {
        let r = &self.region;
        let lay = r.layout;
        let t = self.steps();
        EmpcTrajectory {
            p_gc: DMatrix::from_fn(t, lay.n_gc, |k, i| point[r.p_gc_index(k, i)]),
            q_gc: DMatrix::from_fn(t, lay.n_gc, |k, i| point[r.q_gc_index(k, i)]),
            p_vg: DMatrix::from_fn(t, lay.n_dc, |k, i| point[r.p_vg_index(k, i)]),
            q_vg: DMatrix::from_fn(t, lay.n_dc, |k, i| point[r.q_vg_index(k, i)]),
            vm: DMatrix::from_fn(t, lay.n_volt, |k, i| point[r.vm_index(k, i)]),
            va: DMatrix::from_fn(t, lay.n_volt, |k, i| point[r.va_index(k, i)]),
            x: DMatrix::from_fn(t, lay.n_own, |k, i| point[r.x_index(k, i)]),
        }
    }

    /// Network losses `Σ_b p_inj(b)` at each step.
    pub fn losses(&self, point: &DVector<f64>) -> Vec<f64> {
        (0..self.steps()).map(|k| self.region.internal_injection(point, k).iter().sum()).collect()
    }

    /// A start built from a previous solution moved one step forward, with
    /// the last step repeated.
    pub fn shifted_start(&self, previous: &DVector<f64>) -> DVector<f64> {
        let size = self.region.layout.size;
        let t = self.steps();
        assert_eq!(previous.len(), t * size, "previous solution has the wrong length");
        let mut x = DVector::zeros(t * size);
        for k in 0..t {
            let src = (k + 1).min(t - 1);
            x.rows_mut(k * size, size).copy_from(&previous.rows(src * size, size));
        }
        let (lo, hi) = self.region.bounds();
        for i in 0..x.len() {
            x[i] = x[i].clamp(lo[i], hi[i]);
        }
        x
    }
}

/// Gradient and (constant, diagonal) Hessian of the objective.
pub fn empc_objective_derivatives(problem: &EmpcProblem, point: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if point.len() != problem.n_vars() {
        return Err(Error::Dimension(format!("point has {} entries, problem has {}", point.len(), problem.n_vars())));
    }
    Ok((problem.region.objective_gradient_vec(point), problem.region.objective_hessian(point)))
}

impl NlpInstance for EmpcProblem {
    fn num_vars(&self) -> usize {
        self.region.num_vars()
    }
    fn num_eqs(&self) -> usize {
        self.region.num_eqs()
    }
    fn objective(&self, x: &DVector<f64>) -> f64 {
        self.region.objective(x)
    }
    fn objective_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.region.objective_gradient(x)
    }
    fn objective_hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.region.objective_hessian(x)
    }
    fn eq_residual(&self, x: &DVector<f64>) -> DVector<f64> {
        self.region.eq_residual(x)
    }
    fn eq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.region.eq_jacobian(x)
    }
    fn eq_hessian_contraction(&self, x: &DVector<f64>, mult: &DVector<f64>) -> DMatrix<f64> {
        self.region.eq_hessian_contraction(x, mult)
    }
    fn lower_bounds(&self) -> DVector<f64> {
        self.region.lower_bounds()
    }
    fn upper_bounds(&self) -> DVector<f64> {
        self.region.upper_bounds()
    }
    fn linear_rows(&self) -> Vec<LinearRow> {
        self.region.linear_rows()
    }
    fn lagrangian_hessian(&self, x: &DVector<f64>, obj_factor: f64, mult: &DVector<f64>) -> DMatrix<f64> {
        self.region.lagrangian_hessian(x, obj_factor, mult)
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::grid::{Branch, Bus, DcUnit, DsUnit, GcUnit, GsUnit};

    /// Five-bus feeder 0-1-2, 1-3-4 with generators at 0 and 3.
    pub fn small_case(x_bound: f64) -> (Network, DeviceFleet) {
        let mut buses: Vec<Bus> = (0..5).map(|i| Bus::new(i, 0.9, 1.1, -x_bound, x_bound)).collect();
        buses[0].is_reference = true;
        let mut branches = vec![
            Branch::new(0, 1, 0.01, 0.03),
            Branch::new(1, 2, 0.015, 0.04),
            Branch::new(1, 3, 0.012, 0.035),
            Branch::new(3, 4, 0.02, 0.05),
        ];
        branches[0].shunt_susceptance = 0.002;
        let net = Network { base_mva: 10.0, buses, branches };
        let gc = |bus: usize, c2: f64, c1: f64, pmax: f64, r: f64| GcUnit {
            bus,
            c2,
            c1,
            c0: 1.0,
            p_min: 0.0,
            p_max: pmax,
            q_min: -pmax,
            q_max: pmax,
            r_min: -r,
            r_max: r,
        };
        let fleet = DeviceFleet {
            gc: vec![gc(0, 100.0, 400.0, 2.0, 6.0), gc(3, 300.0, 430.0, 0.1, 1.2)],
            gs: vec![GsUnit { bus: 2 }],
            ds: vec![DsUnit { bus: 2 }, DsUnit { bus: 4 }],
            dc: vec![DcUnit::new(2), DcUnit::new(4)],
        };
        (net, fleet)
    }

    pub fn small_forecasts(steps: usize, fleet: &DeviceFleet) -> Forecasts {
        let mut f = Forecasts::zeros(steps, fleet);
        for k in 0..steps {
            let s = 1.0 + 0.05 * k as f64;
            f.p_ds_hat[(k, 0)] = 0.30 * s;
            f.p_ds_hat[(k, 1)] = 0.25 * s;
            f.q_ds_hat[(k, 0)] = 0.10 * s;
            f.q_ds_hat[(k, 1)] = 0.08 * s;
            f.p_gs_hat[(k, 0)] = 0.04;
            for d in 0..2 {
                f.p_dc_hat[(k, d)] = f.p_ds_hat[(k, d)];
                f.q_dc_hat[(k, d)] = f.q_ds_hat[(k, d)];
                f.dc_cost_a[(k, d)] = 3000.0;
                f.dc_cost_b[(k, d)] = 380.0 + 20.0 * k as f64;
            }
        }
        f
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::nlp::{check_derivatives, solve_nlp};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(steps: usize) -> EmpcProblem {
        let (net, fleet) = small_case(0.01);
        let f = small_forecasts(steps, &fleet);
        assemble_empc(&net, &fleet, &f, HorizonConfig { steps, dt: 1.0 / 12.0 }, &DVector::zeros(5), None).unwrap()
    }

    fn random_interior(p: &EmpcProblem, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let lo = p.lower_bounds();
        let hi = p.upper_bounds();
        DVector::from_fn(p.n_vars(), |i, _| {
            let (a, b) = (lo[i].max(-1.0), hi[i].min(1.2));
            if b > a {
                rng.random_range(a..b)
            } else {
                a
            }
        })
    }

    #[test]
    fn generation_cost_substitution() {
        let (_, mut fleet) = small_case(0.0);
        fleet.gc.truncate(1);
        fleet.gc[0].c2 = 1.0;
        fleet.gc[0].c1 = 2.0;
        fleet.gc[0].c0 = 3.0;
        assert_eq!(generation_cost(&DMatrix::from_element(1, 1, 2.0), &fleet).unwrap(), 11.0);
        assert_eq!(generation_cost(&DMatrix::zeros(4, 1), &fleet).unwrap(), 12.0);
    }

    #[test]
    fn generation_cost_matches_loop_oracle() {
        let (_, fleet) = small_case(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = DMatrix::from_fn(6, 2, |_, _| rng.random_range(0.0..2.0));
        let mut oracle = 0.0;
        for k in 0..6 {
            for g in 0..2 {
                let u = &fleet.gc[g];
                oracle += u.c0 + p[(k, g)] * (u.c1 + p[(k, g)] * u.c2);
            }
        }
        assert!((generation_cost(&p, &fleet).unwrap() - oracle).abs() <= 1e-12 * oracle.abs());
    }

    #[test]
    fn virtual_gen_cost_modes() {
        let (_, fleet) = small_case(0.0);
        let mut f = small_forecasts(3, &fleet);
        f.dc_cost_c.fill(0.5);
        assert_eq!(virtual_gen_cost(&DMatrix::zeros(3, 2), &f).unwrap(), 3.0);
        f.dc_cost_a.fill(0.0);
        f.dc_cost_c.fill(0.0);
        let p = DMatrix::from_fn(3, 2, |k, d| 0.01 * (k + d) as f64);
        let expected: f64 = (0..3).flat_map(|k| (0..2).map(move |d| (k, d))).map(|(k, d)| f.dc_cost_b[(k, d)] * p[(k, d)]).sum();
        assert!((virtual_gen_cost(&p, &f).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn vg_capacity_is_the_fraction_of_forecast() {
        let (_, fleet) = small_case(0.0);
        let mut f = small_forecasts(2, &fleet);
        f.p_dc_hat[(1, 0)] = 1.0;
        f.p_dc_hat[(1, 1)] = 0.0;
        let cap = vg_capacity(&f, &fleet, 1).unwrap();
        assert!((cap.p_vg_max[0] - 0.2).abs() < 1e-15);
        assert_eq!(cap.p_vg_max[1], 0.0);
        assert!(vg_capacity(&f, &fleet, 2).is_err());
    }

    #[test]
    fn counts_follow_the_layout() {
        let p = problem(5);
        let (nb, ng, nd) = (5, 2, 2);
        assert_eq!(p.n_vars(), 5 * (2 * ng + 2 * nd + 3 * nb));
        assert_eq!(p.n_eqs(), 5 * (2 * nb + 1));
        assert_eq!(p.row_labels().len(), p.n_eqs());
    }

    #[test]
    fn initial_state_enters_the_first_update() {
        let (net, fleet) = small_case(0.01);
        let f = small_forecasts(2, &fleet);
        let x0 = DVector::from_vec(vec![0.003, -0.002, 0.0, 0.001, 0.0]);
        let p = assemble_empc(&net, &fleet, &f, HorizonConfig { steps: 2, dt: 0.1 }, &x0, None).unwrap();
        let mut pt = p.flat_start();
        let r0 = p.eq_residual(&pt);
        pt[p.region().x_index(0, 1)] += 0.5;
        let r1 = p.eq_residual(&pt);
        assert!((r1[1] - r0[1] - 0.5).abs() < 1e-15);
        let flat = p.flat_start();
        let mut zero_gen = flat.clone();
        for k in 0..2 {
            for i in 0..2 {
                zero_gen[p.region().p_gc_index(k, i)] = 0.0;
                zero_gen[p.region().p_vg_index(k, i)] = 0.0;
            }
        }
        // At flat voltage without shunt flow the bus-1 state row reads x(1) − x0.
        let r = p.eq_residual(&zero_gen);
        assert!((r[1] - (flat[p.region().x_index(0, 1)] - x0[1])).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (net, fleet) = small_case(0.01);
        let f = small_forecasts(2, &fleet);
        let h = HorizonConfig { steps: 2, dt: 0.1 };
        let x0 = DVector::from_element(5, 0.5);
        assert!(assemble_empc(&net, &fleet, &f, h, &x0, None).is_err());
        assert!(assemble_empc(&net, &fleet, &f, HorizonConfig { steps: 3, dt: 0.1 }, &DVector::zeros(5), None).is_err());
        assert!(assemble_empc(&net, &fleet, &f, HorizonConfig { steps: 0, dt: 0.1 }, &DVector::zeros(5), None).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let p = problem(3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let x = random_interior(&p, &mut rng);
            let r = check_derivatives(&p, &x, 1e-6);
            assert!(r.is_clean(), "{:?}", &r.flags[..r.flags.len().min(5)]);
        }
    }

    #[test]
    fn objective_hessian_ignores_network_and_state() {
        let p = problem(2);
        let (g, h) = empc_objective_derivatives(&p, &p.flat_start()).unwrap();
        let r = p.region();
        for k in 0..2 {
            for i in 0..5 {
                for j in [r.vm_index(k, i), r.va_index(k, i), r.x_index(k, i)] {
                    assert_eq!(g[j], 0.0);
                    assert!(h.row(j).iter().all(|&v| v == 0.0));
                }
            }
        }
        assert!(empc_objective_derivatives(&p, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn zero_dispatch_with_no_linear_terms_has_zero_gradient() {
        let (net, mut fleet) = small_case(0.01);
        for u in &mut fleet.gc {
            u.c1 = 0.0;
        }
        let mut f = small_forecasts(2, &fleet);
        f.dc_cost_b.fill(0.0);
        let p = assemble_empc(&net, &fleet, &f, HorizonConfig { steps: 2, dt: 0.1 }, &DVector::zeros(5), None).unwrap();
        let mut x = p.flat_start();
        for k in 0..2 {
            for i in 0..2 {
                x[p.region().p_gc_index(k, i)] = 0.0;
                x[p.region().p_vg_index(k, i)] = 0.0;
            }
        }
        assert_eq!(p.objective_gradient(&x).amax(), 0.0);
    }

    #[test]
    fn solved_point_is_feasible_and_conserves_energy() {
        let p = problem(4);
        let sol = solve_nlp(&p, &p.flat_start(), 1e-8, 200);
        assert!(sol.is_converged(), "{}", sol.message);
        assert!(p.eq_residual(&sol.primal).amax() <= 1e-8);
        let traj = p.trajectory(&sol.primal);
        let losses = p.losses(&sol.primal);
        let f = &p.forecasts;
        let dt = p.horizon.dt;
        let mut lhs = 0.0;
        for k in 0..4 {
            lhs += dt
                * (traj.p_gc.row(k).sum() + traj.p_vg.row(k).sum() + f.p_gs_hat.row(k).sum()
                    - f.p_ds_hat.row(k).sum()
                    - losses[k]);
        }
        let rhs = traj.x.row(3).sum() - p.x0.sum();
        assert!((lhs - rhs).abs() <= 1e-8, "{lhs} vs {rhs}");
        for (row, label) in p.ramp_rows().iter().zip(0..) {
            let v = row.value(&sol.primal);
            assert!(v >= row.lower - 1e-8 && v <= row.upper + 1e-8, "ramp row {label}");
        }
    }
}
