//! Shared builders and independent oracles for the integration suites.

#![allow(dead_code)]

use dempc::empc::{assemble_empc_with, EmpcOptions, EmpcProblem, Forecasts, HorizonConfig, ReactiveVg};
use dempc::grid::{build_admittance, build_incidence, Branch, Bus, Complex64, DcUnit, DeviceFleet, DsUnit, GcUnit, Network};
use dempc::io::{day_profile, generate_lebanon_synthetic, Case};
use dempc::nlp::NlpInstance;
use dempc::powerflow::{injection_hessian_contraction, injection_jacobian, injections, VoltageState};
use dempc::sim::DayProfile;
use nalgebra::{DMatrix, DVector};

pub const UNBOUNDED_RAMP: f64 = 1e20;

pub fn synthetic() -> (Case, DayProfile) {
    let (file, records) = generate_lebanon_synthetic();
    let case = file.resolve().unwrap();
    let day = day_profile(&records, &case.fleet, file.base_kw()).unwrap();
    (case, day)
}

/// Zero energy bounds, zero initial state and unbounded ramps.
pub fn decoupled(mut case: Case) -> Case {
    for b in &mut case.network.buses {
        b.x_min = 0.0;
        b.x_max = 0.0;
    }
    for g in &mut case.fleet.gc {
        g.r_min = -UNBOUNDED_RAMP;
        g.r_max = UNBOUNDED_RAMP;
    }
    case.x0 = DVector::zeros(case.network.n_bus());
    case
}

pub fn horizon_problem(case: &Case, forecasts: &Forecasts, steps: usize) -> EmpcProblem {
    let horizon = HorizonConfig { steps, dt: case.horizon.dt };
    assemble_empc_with(&case.network, &case.fleet, forecasts, horizon, &case.x0, None, case.empc).unwrap()
}

/// One row of a forecast window as a single-step forecast.
pub fn forecast_row(f: &Forecasts, k: usize) -> Forecasts {
    let row = |m: &DMatrix<f64>| DMatrix::from_fn(1, m.ncols(), |_, d| m[(k, d)]);
    Forecasts {
        p_ds_hat: row(&f.p_ds_hat),
        q_ds_hat: row(&f.q_ds_hat),
        p_gs_hat: row(&f.p_gs_hat),
        p_dc_hat: row(&f.p_dc_hat),
        q_dc_hat: row(&f.q_dc_hat),
        dc_cost_a: row(&f.dc_cost_a),
        dc_cost_b: row(&f.dc_cost_b),
        dc_cost_c: row(&f.dc_cost_c),
    }
}

/// Single-period AC optimal power flow with demand response, assembled
/// directly from bus balances.
///
/// Variables `[P_GC; Q_GC; P_VG; |V|; ∠V]`; the reactive part of demand
/// response follows the forecast power factor. Equalities: active and
/// reactive balance per bus, then the reference angle.
pub struct Acopf {
    pub network: Network,
    pub fleet: DeviceFleet,
    pub forecasts: Forecasts,
    y: DMatrix<Complex64>,
    inj_gc: DMatrix<f64>,
    inj_gs: DMatrix<f64>,
    inj_ds: DMatrix<f64>,
    inj_dc: DMatrix<f64>,
    tan_vg: Vec<f64>,
}

impl Acopf {
    pub fn new(network: &Network, fleet: &DeviceFleet, forecasts: &Forecasts) -> Self {
        let inc = build_incidence(fleet, network).unwrap();
        let tan_vg = (0..fleet.dc.len())
            .map(|d| {
                let p = forecasts.p_dc_hat[(0, d)];
                if p > 0.0 {
                    forecasts.q_dc_hat[(0, d)] / p
                } else {
                    0.0
                }
            })
            .collect();
        Self {
            network: network.clone(),
            fleet: fleet.clone(),
            forecasts: forecasts.clone(),
            y: build_admittance(network).unwrap(),
            inj_gc: inc.gc,
            inj_gs: inc.gs,
            inj_ds: inc.ds,
            inj_dc: inc.dc,
            tan_vg,
        }
    }

    fn sizes(&self) -> (usize, usize, usize) {
        (self.fleet.gc.len(), self.fleet.dc.len(), self.network.n_bus())
    }

    fn split(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>, VoltageState) {
        let (g, d, n) = self.sizes();
        (
            x.rows(0, g).into_owned(),
            x.rows(g, g).into_owned(),
            x.rows(2 * g, d).into_owned(),
            VoltageState { magnitude: x.rows(2 * g + d, n).into_owned(), angle: x.rows(2 * g + d + n, n).into_owned() },
        )
    }

    fn reference(&self) -> usize {
        self.network.buses.iter().position(|b| b.is_reference).unwrap_or(0)
    }

    pub fn flat_start(&self) -> DVector<f64> {
        let lo = self.lower_bounds();
        let hi = self.upper_bounds();
        let (g, d, n) = self.sizes();
        DVector::from_fn(self.num_vars(), |j, _| {
            if j >= 2 * g + d + n {
                0.0
            } else if j >= 2 * g + d {
                1.0f64.clamp(lo[j], hi[j])
            } else {
                0.5 * (lo[j] + hi[j])
            }
        })
    }
}

impl NlpInstance for Acopf {
    fn num_vars(&self) -> usize {
        let (g, d, n) = self.sizes();
        2 * g + d + 2 * n
    }
    fn num_eqs(&self) -> usize {
        2 * self.network.n_bus() + 1
    }
    fn objective(&self, x: &DVector<f64>) -> f64 {
        let (p, _, vg, _) = self.split(x);
        let mut j = 0.0;
        for (u, pg) in self.fleet.gc.iter().zip(p.iter()) {
            j += u.c2 * pg * pg + u.c1 * pg + u.c0;
        }
        for d in 0..vg.len() {
            let f = &self.forecasts;
            j += f.dc_cost_a[(0, d)] * vg[d] * vg[d] + f.dc_cost_b[(0, d)] * vg[d] + f.dc_cost_c[(0, d)];
        }
        j
    }
    fn objective_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let (g, _, _) = self.sizes();
        let (p, _, vg, _) = self.split(x);
        let mut out = DVector::zeros(x.len());
        for (i, u) in self.fleet.gc.iter().enumerate() {
            out[i] = 2.0 * u.c2 * p[i] + u.c1;
        }
        for d in 0..vg.len() {
            out[2 * g + d] = 2.0 * self.forecasts.dc_cost_a[(0, d)] * vg[d] + self.forecasts.dc_cost_b[(0, d)];
        }
        out
    }
    fn objective_hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (g, d, _) = self.sizes();
        let mut h = DMatrix::zeros(x.len(), x.len());
        for (i, u) in self.fleet.gc.iter().enumerate() {
            h[(i, i)] = 2.0 * u.c2;
        }
        for k in 0..d {
            h[(2 * g + k, 2 * g + k)] = 2.0 * self.forecasts.dc_cost_a[(0, k)];
        }
        h
    }
    fn eq_residual(&self, x: &DVector<f64>) -> DVector<f64> {
        let (_, d, n) = self.sizes();
        let (p, q, vg, v) = self.split(x);
        let inj = injections(&v, &self.y).unwrap();
        let f = &self.forecasts;
        let qvg = DVector::from_fn(d, |k, _| self.tan_vg[k] * vg[k]);
        let pb = &self.inj_gc * &p + &self.inj_gs * f.p_gs_hat.row(0).transpose() + &self.inj_dc * &vg
            - &self.inj_ds * f.p_ds_hat.row(0).transpose()
            - &inj.p_inj;
        let qb = &self.inj_gc * &q + &self.inj_dc * &qvg - &self.inj_ds * f.q_ds_hat.row(0).transpose() - &inj.q_inj;
        let mut r = DVector::zeros(2 * n + 1);
        r.rows_mut(0, n).copy_from(&pb);
        r.rows_mut(n, n).copy_from(&qb);
        r[2 * n] = v.angle[self.reference()];
        r
    }
    fn eq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (g, d, n) = self.sizes();
        let (_, _, _, v) = self.split(x);
        let dj = injection_jacobian(&v, &self.y).unwrap();
        let mut jac = DMatrix::zeros(2 * n + 1, x.len());
        jac.view_mut((0, 0), (n, g)).copy_from(&self.inj_gc);
        jac.view_mut((n, g), (n, g)).copy_from(&self.inj_gc);
        jac.view_mut((0, 2 * g), (n, d)).copy_from(&self.inj_dc);
        for k in 0..d {
            for b in 0..n {
                jac[(n + b, 2 * g + k)] = self.inj_dc[(b, k)] * self.tan_vg[k];
            }
        }
        let v0 = 2 * g + d;
        for r in 0..2 * n {
            for c in 0..2 * n {
                jac[(r, v0 + c)] = -dj[(r, c)];
            }
        }
        jac[(2 * n, v0 + n + self.reference())] = 1.0;
        jac
    }
    fn eq_hessian_contraction(&self, x: &DVector<f64>, mult: &DVector<f64>) -> DMatrix<f64> {
        let (g, d, n) = self.sizes();
        let (_, _, _, v) = self.split(x);
        let mp = -mult.rows(0, n).into_owned();
        let mq = -mult.rows(n, n).into_owned();
        let hv = injection_hessian_contraction(&v, &self.y, &mp, &mq).unwrap();
        let mut h = DMatrix::zeros(x.len(), x.len());
        h.view_mut((2 * g + d, 2 * g + d), (2 * n, 2 * n)).copy_from(&hv);
        h
    }
    fn lower_bounds(&self) -> DVector<f64> {
        let (g, d, n) = self.sizes();
        let mut lo = DVector::zeros(self.num_vars());
        for (i, u) in self.fleet.gc.iter().enumerate() {
            lo[i] = u.p_min;
            lo[g + i] = u.q_min;
        }
        for b in 0..n {
            lo[2 * g + d + b] = self.network.buses[b].v_min;
            lo[2 * g + d + n + b] = -1e20;
        }
        lo
    }
    fn upper_bounds(&self) -> DVector<f64> {
        let (g, d, n) = self.sizes();
        let mut hi = DVector::zeros(self.num_vars());
        for (i, u) in self.fleet.gc.iter().enumerate() {
            hi[i] = u.p_max;
            hi[g + i] = u.q_max;
        }
        for (k, u) in self.fleet.dc.iter().enumerate() {
            hi[2 * g + k] = u.capacity_fraction * self.forecasts.p_dc_hat[(0, k)];
        }
        for b in 0..n {
            hi[2 * g + d + b] = self.network.buses[b].v_max;
            hi[2 * g + d + n + b] = 1e20;
        }
        hi
    }
}

fn gc(bus: usize, c2: f64, c1: f64) -> GcUnit {
    GcUnit {
        bus,
        c2,
        c1,
        c0: 0.0,
        p_min: 0.0,
        p_max: 2.0,
        q_min: -2.0,
        q_max: 2.0,
        r_min: -UNBOUNDED_RAMP,
        r_max: UNBOUNDED_RAMP,
    }
}

fn reference_bus(id: usize) -> Bus {
    let mut b = Bus::new(id, 1.0, 1.0, 0.0, 0.0);
    b.is_reference = true;
    b
}

/// Load bus data for the small oracle instances.
pub struct SmallInstance {
    pub network: Network,
    pub fleet: DeviceFleet,
    pub forecasts: Forecasts,
    pub options: EmpcOptions,
}

impl SmallInstance {
    pub fn problem(&self) -> EmpcProblem {
        let n = self.network.n_bus();
        let horizon = HorizonConfig { steps: 1, dt: 1.0 / 12.0 };
        assemble_empc_with(&self.network, &self.fleet, &self.forecasts, horizon, &DVector::zeros(n), None, self.options)
            .unwrap()
    }
}

fn forecasts_1(p_ds: &[f64], q_ds: &[f64], dc: &[(f64, f64, f64, f64)]) -> Forecasts {
    let row = |v: &[f64]| DMatrix::from_row_slice(1, v.len(), v);
    let col = |i: usize| dc.iter().map(|t| [t.0, t.1, t.2, t.3][i]).collect::<Vec<_>>();
    Forecasts {
        p_ds_hat: row(p_ds),
        q_ds_hat: row(q_ds),
        p_gs_hat: DMatrix::zeros(1, 0),
        p_dc_hat: row(&col(0)),
        q_dc_hat: row(&col(1)),
        dc_cost_a: row(&col(2)),
        dc_cost_b: row(&col(3)),
        dc_cost_c: DMatrix::zeros(1, dc.len()),
    }
}

/// Two buses joined by `0.01 + j0.1`; fixed-voltage supply at bus 0, a
/// `0.5 + j0.1` load and a demand-response unit with free reactive output at
/// bus 1.
pub fn two_bus() -> SmallInstance {
    SmallInstance {
        network: Network {
            base_mva: 10.0,
            buses: vec![reference_bus(0), Bus::new(1, 0.9, 1.1, 0.0, 0.0)],
            branches: vec![Branch::new(0, 1, 0.01, 0.1)],
        },
        fleet: DeviceFleet {
            gc: vec![gc(0, 1.0, 1.0)],
            gs: vec![],
            ds: vec![DsUnit { bus: 1 }],
            dc: vec![DcUnit { bus: 1, capacity_fraction: 0.2 }],
        },
        forecasts: forecasts_1(&[0.5], &[0.1], &[(0.5, 1.0, 2.0, 1.5)]),
        options: EmpcOptions { reactive_vg: ReactiveVg::Free },
    }
}

/// Chain 0-1-2: fixed-voltage supply at bus 0, loads at buses 1 and 2 and a
/// dearer generator at bus 2.
pub fn three_bus() -> SmallInstance {
    SmallInstance {
        network: Network {
            base_mva: 10.0,
            buses: vec![reference_bus(0), Bus::new(1, 0.9, 1.1, 0.0, 0.0), Bus::new(2, 0.9, 1.1, 0.0, 0.0)],
            branches: vec![Branch::new(0, 1, 0.01, 0.1), Branch::new(1, 2, 0.02, 0.15)],
        },
        fleet: DeviceFleet {
            gc: vec![gc(0, 1.0, 1.0), gc(2, 2.0, 1.2)],
            gs: vec![],
            ds: vec![DsUnit { bus: 1 }, DsUnit { bus: 2 }],
            dc: vec![],
        },
        forecasts: forecasts_1(&[0.4, 0.3], &[0.1, 0.1], &[]),
        options: EmpcOptions::default(),
    }
}

/// Bus power `S_i = V_i · conj(Σ_j Y_ij V_j)` from explicit complex sums.
fn bus_power(y: &DMatrix<Complex64>, v: &[Complex64], i: usize) -> Complex64 {
    let current: Complex64 = (0..v.len()).map(|j| y[(i, j)] * v[j]).sum();
    v[i] * current.conj()
}

/// Objective of the oracle instance at bus-1 voltage `(m, a)`, or `None`
/// when the implied dispatch violates a bound. Every other quantity follows
/// from the fixed supply voltage and the bus balances.
pub fn oracle_objective(inst: &SmallInstance, m: f64, a: f64) -> Option<f64> {
    let y = build_admittance(&inst.network).unwrap();
    let v0 = Complex64::new(inst.network.buses[0].v_max, 0.0);
    let v1 = Complex64::from_polar(m, a);
    let f = &inst.forecasts;
    let gc = &inst.fleet.gc;
    match inst.network.n_bus() {
        2 => {
            let v = [v0, v1];
            let s0 = bus_power(&y, &v, 0);
            let s1 = bus_power(&y, &v, 1);
            // Bus 1: VG − load = S1.
            let p_vg = s1.re + f.p_ds_hat[(0, 0)];
            let q_vg = s1.im + f.q_ds_hat[(0, 0)];
            let cap = inst.fleet.dc[0].capacity_fraction;
            let feasible = (0.0..=cap * f.p_dc_hat[(0, 0)]).contains(&p_vg)
                && (0.0..=cap * f.q_dc_hat[(0, 0)]).contains(&q_vg)
                && (gc[0].p_min..=gc[0].p_max).contains(&s0.re)
                && (gc[0].q_min..=gc[0].q_max).contains(&s0.im);
            feasible.then(|| {
                gc[0].c2 * s0.re * s0.re
                    + gc[0].c1 * s0.re
                    + f.dc_cost_a[(0, 0)] * p_vg * p_vg
                    + f.dc_cost_b[(0, 0)] * p_vg
            })
        }
        3 => {
            // Bus 1 balance fixes V2 linearly: Y12·V2 = conj(S1 / V1) − Y10·V0 − Y11·V1.
            let s1 = Complex64::new(-f.p_ds_hat[(0, 0)], -f.q_ds_hat[(0, 0)]);
            let v2 = ((s1 / v1).conj() - y[(1, 0)] * v0 - y[(1, 1)] * v1) / y[(1, 2)];
            let bus2 = &inst.network.buses[2];
            if !(bus2.v_min..=bus2.v_max).contains(&v2.norm()) {
                return None;
            }
            let v = [v0, v1, v2];
            let s0 = bus_power(&y, &v, 0);
            let g2 = bus_power(&y, &v, 2) + Complex64::new(f.p_ds_hat[(0, 1)], f.q_ds_hat[(0, 1)]);
            let ok = |u: &GcUnit, s: Complex64| (u.p_min..=u.p_max).contains(&s.re) && (u.q_min..=u.q_max).contains(&s.im);
            (ok(&gc[0], s0) && ok(&gc[1], g2)).then(|| {
                gc[0].c2 * s0.re * s0.re + gc[0].c1 * s0.re + gc[1].c2 * g2.re * g2.re + gc[1].c1 * g2.re
            })
        }
        n => panic!("no oracle for {n} buses"),
    }
}

/// Best objective over a grid of bus-1 voltages at `resolution`, refined by
/// a shrinking compass search around the best grid point.
pub fn brute_force(inst: &SmallInstance, resolution: f64) -> (f64, f64, f64) {
    let bus1 = &inst.network.buses[1];
    let n_m = ((bus1.v_max - bus1.v_min) / resolution).round() as usize;
    let (a_lo, a_hi) = (-0.5, 0.5);
    let n_a = ((a_hi - a_lo) / resolution).round() as usize;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=n_m {
        let m = bus1.v_min + i as f64 * resolution;
        for k in 0..=n_a {
            let a = a_lo + k as f64 * resolution;
            if let Some(j) = oracle_objective(inst, m, a) {
                if j < best.0 {
                    best = (j, m, a);
                }
            }
        }
    }
    assert!(best.0.is_finite(), "no feasible grid point");
    let mut step = resolution;
    while step > 1e-12 {
        let mut moved = false;
        for (dm, da) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
            let (m, a) = (best.1 + dm * step, best.2 + da * step);
            if let Some(j) = oracle_objective(inst, m, a) {
                if j < best.0 {
                    best = (j, m, a);
                    moved = true;
                }
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    best
}
