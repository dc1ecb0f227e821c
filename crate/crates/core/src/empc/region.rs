//! The multi-period problem restricted to a set of owned buses.
//!
//! A region owns some buses and every device attached to them. When the
//! owned set is not the whole network, each branch leaving the region (a tie
//! line) brings in a duplicate copy of the voltage at its far end and four
//! flow auxiliaries per step: active and reactive flow measured at the
//! branch's `from` end and at its `to` end. Owned-bus balances then use the
//! internal admittance matrix plus the tie-flow auxiliaries, and four
//! equalities per tie and step define the auxiliaries from the two end
//! voltages.
//!
//! With every bus owned there are no ties and no duplicates, and the region
//! is exactly the centralized problem.

use nalgebra::{DMatrix, DVector};

use super::{EmpcInputs, ReactiveVg};
use crate::error::{Error, Result};
use crate::grid::{Complex64, GcUnit};
use crate::nlp::{LinearRow, NlpInstance, INFINITE_BOUND};
use crate::powerflow::{injection_hessian_contraction, injection_jacobian, injections, VoltageState};

#[derive(Debug, Clone)]
pub struct TieLine {
    pub branch: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    /// Two-bus admittance block ordered `[from, to]`.
    pub block: DMatrix<Complex64>,
}

/// Offsets of each variable block inside one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepLayout {
    pub n_gc: usize,
    pub n_dc: usize,
    pub n_own: usize,
    pub n_volt: usize,
    pub n_tie: usize,
    pub p_gc: usize,
    pub q_gc: usize,
    pub p_vg: usize,
    pub q_vg: usize,
    pub vm: usize,
    pub va: usize,
    pub x: usize,
    pub tie: usize,
    pub size: usize,
}

impl StepLayout {
    fn new(n_gc: usize, n_dc: usize, n_own: usize, n_dup: usize, n_tie: usize) -> Self {
        let n_volt = n_own + n_dup;
        let p_gc = 0;
        let q_gc = p_gc + n_gc;
        let p_vg = q_gc + n_gc;
        let q_vg = p_vg + n_dc;
        let vm = q_vg + n_dc;
        let va = vm + n_volt;
        let x = va + n_volt;
        let tie = x + n_own;
        let size = tie + 4 * n_tie;
        Self { n_gc, n_dc, n_own, n_volt, n_tie, p_gc, q_gc, p_vg, q_vg, vm, va, x, tie, size }
    }
}

/// Which equality a row of the residual vector represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    /// Energy-state update at a bus.
    State { bus: usize },
    /// Reactive-power balance at a bus.
    Reactive { bus: usize },
    /// Reference angle.
    Reference { bus: usize },
    /// Definition of one tie-flow auxiliary (`0..4` = P_from, Q_from, P_to, Q_to).
    TieFlow { branch: usize, quantity: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowLabel {
    pub step: usize,
    pub kind: RowKind,
}

#[derive(Debug, Clone)]
pub struct Region {
    pub steps: usize,
    pub dt: f64,
    /// Global ids of owned buses, ascending.
    pub owned: Vec<usize>,
    /// Global ids of duplicated far-end tie buses, ascending.
    pub duplicates: Vec<usize>,
    pub ties: Vec<TieLine>,
    /// Global device indices owned by the region.
    pub gc: Vec<usize>,
    pub dc: Vec<usize>,
    pub layout: StepLayout,
    pub reactive_vg: ReactiveVg,
    gc_units: Vec<GcUnit>,
    /// Owned-bus index of each owned GC / DC.
    gc_bus: Vec<usize>,
    dc_bus: Vec<usize>,
    /// Position of every global bus in the voltage vector, if present.
    volt_pos: Vec<Option<usize>>,
    reference: Option<usize>,
    y_local: DMatrix<Complex64>,
    /// Fixed active / reactive injection per step and owned bus (GS minus DS).
    p_fixed: DMatrix<f64>,
    q_fixed: DMatrix<f64>,
    /// Per step and owned DC device.
    vg_cap: DMatrix<f64>,
    q_vg_cap: DMatrix<f64>,
    vg_ratio: DMatrix<f64>,
    dc_a: DMatrix<f64>,
    dc_b: DMatrix<f64>,
    dc_c: DMatrix<f64>,
    v_min: Vec<f64>,
    v_max: Vec<f64>,
    x_min: Vec<f64>,
    x_max: Vec<f64>,
    x0: Vec<f64>,
    p_gc_prev: Option<Vec<f64>>,
    m_step: usize,
}

impl Region {
    pub fn build(inp: &EmpcInputs<'_>, owned: &[usize]) -> Result<Self> {
        let net = inp.network;
        let fleet = inp.fleet;
        let n_bus = net.n_bus();
        let t = inp.horizon.steps;
        let mut owned: Vec<usize> = owned.to_vec();
        owned.sort_unstable();
        owned.dedup();
        if owned.is_empty() {
            return Err(Error::Partition("region has no buses".into()));
        }
        if let Some(&b) = owned.iter().find(|&&b| b >= n_bus) {
            return Err(Error::Partition(format!("bus {b} does not exist")));
        }
        let mut is_owned = vec![false; n_bus];
        for &b in &owned {
            is_owned[b] = true;
        }

        let mut internal = Vec::new();
        let mut ties = Vec::new();
        let mut duplicates = Vec::new();
        for (k, br) in net.branches.iter().enumerate() {
            match (is_owned[br.from_bus], is_owned[br.to_bus]) {
                (true, true) => internal.push(k),
                (true, false) | (false, true) => {
                    if br.series_admittance().norm() == 0.0 || !br.series_admittance().norm().is_finite() {
                        return Err(Error::ZeroImpedance { index: k, from: br.from_bus, to: br.to_bus });
                    }
                    let far = if is_owned[br.from_bus] { br.to_bus } else { br.from_bus };
                    duplicates.push(far);
                    ties.push(TieLine { branch: k, from_bus: br.from_bus, to_bus: br.to_bus, block: br.admittance_block() });
                }
                (false, false) => {}
            }
        }
        duplicates.sort_unstable();
        duplicates.dedup();

        let mut volt_pos = vec![None; n_bus];
        for (i, &b) in owned.iter().chain(duplicates.iter()).enumerate() {
            volt_pos[b] = Some(i);
        }
        let n_own = owned.len();
        let n_volt = n_own + duplicates.len();

        let mut y_local = DMatrix::from_element(n_volt, n_volt, Complex64::new(0.0, 0.0));
        for &k in &internal {
            let br = &net.branches[k];
            let ys = br.series_admittance();
            if ys.norm() == 0.0 || !ys.norm().is_finite() {
                return Err(Error::ZeroImpedance { index: k, from: br.from_bus, to: br.to_bus });
            }
            let blk = br.admittance_block();
            let (i, j) = (volt_pos[br.from_bus].unwrap(), volt_pos[br.to_bus].unwrap());
            y_local[(i, i)] += blk[(0, 0)];
            y_local[(j, j)] += blk[(1, 1)];
            y_local[(i, j)] += blk[(0, 1)];
            y_local[(j, i)] += blk[(1, 0)];
        }

        let gc: Vec<usize> = (0..fleet.gc.len()).filter(|&g| is_owned[fleet.gc[g].bus]).collect();
        let dc: Vec<usize> = (0..fleet.dc.len()).filter(|&d| is_owned[fleet.dc[d].bus]).collect();
        let gc_bus = gc.iter().map(|&g| volt_pos[fleet.gc[g].bus].unwrap()).collect();
        let dc_bus = dc.iter().map(|&d| volt_pos[fleet.dc[d].bus].unwrap()).collect();

        let fc = inp.forecasts;
        let mut p_fixed = DMatrix::zeros(t, n_own);
        let mut q_fixed = DMatrix::zeros(t, n_own);
        for k in 0..t {
            for (s, unit) in fleet.gs.iter().enumerate() {
                if let Some(i) = volt_pos[unit.bus].filter(|&i| i < n_own) {
                    p_fixed[(k, i)] += fc.p_gs_hat[(k, s)];
                }
            }
            for (s, unit) in fleet.ds.iter().enumerate() {
                if let Some(i) = volt_pos[unit.bus].filter(|&i| i < n_own) {
                    p_fixed[(k, i)] -= fc.p_ds_hat[(k, s)];
                    q_fixed[(k, i)] -= fc.q_ds_hat[(k, s)];
                }
            }
        }
        let nd = dc.len();
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(t, nd, |k, i| m[(k, dc[i])]);
        let mut vg_cap = DMatrix::zeros(t, nd);
        let mut q_vg_cap = DMatrix::zeros(t, nd);
        let mut vg_ratio = DMatrix::zeros(t, nd);
        for k in 0..t {
            for (i, &d) in dc.iter().enumerate() {
                let frac = fleet.dc[d].capacity_fraction;
                let (p, q) = (fc.p_dc_hat[(k, d)], fc.q_dc_hat[(k, d)]);
                vg_cap[(k, i)] = frac * p;
                q_vg_cap[(k, i)] = frac * q;
                vg_ratio[(k, i)] = if p > 0.0 { q / p } else { 0.0 };
            }
        }

        let volt_buses: Vec<usize> = owned.iter().chain(duplicates.iter()).copied().collect();
        let reference = net.reference_bus().filter(|&r| is_owned[r]).map(|r| volt_pos[r].unwrap());
        let layout = StepLayout::new(gc.len(), nd, n_own, duplicates.len(), ties.len());
        let m_step = 2 * n_own + usize::from(reference.is_some()) + 4 * ties.len();

        Ok(Self {
            steps: t,
            dt: inp.horizon.dt,
            gc_units: gc.iter().map(|&g| fleet.gc[g].clone()).collect(),
            p_gc_prev: inp.p_gc_prev.map(|p| gc.iter().map(|&g| p[g]).collect()),
            dc_a: pick(&fc.dc_cost_a),
            dc_b: pick(&fc.dc_cost_b),
            dc_c: pick(&fc.dc_cost_c),
            gc,
            dc,
            gc_bus,
            dc_bus,
            reactive_vg: inp.options.reactive_vg,
            v_min: volt_buses.iter().map(|&b| net.buses[b].v_min).collect(),
            v_max: volt_buses.iter().map(|&b| net.buses[b].v_max).collect(),
            x_min: owned.iter().map(|&b| net.buses[b].x_min).collect(),
            x_max: owned.iter().map(|&b| net.buses[b].x_max).collect(),
            x0: owned.iter().map(|&b| inp.x0[b]).collect(),
            owned,
            duplicates,
            ties,
            layout,
            volt_pos,
            reference,
            y_local,
            p_fixed,
            q_fixed,
            vg_cap,
            q_vg_cap,
            vg_ratio,
            m_step,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.steps * self.layout.size
    }

    pub fn n_eqs(&self) -> usize {
        self.steps * self.m_step
    }

    pub fn eqs_per_step(&self) -> usize {
        self.m_step
    }

    fn base(&self, k: usize) -> usize {
        k * self.layout.size
    }

    pub fn p_gc_index(&self, k: usize, i: usize) -> usize {
        self.base(k) + self.layout.p_gc + i
    }
    pub fn q_gc_index(&self, k: usize, i: usize) -> usize {
        self.base(k) + self.layout.q_gc + i
    }
    pub fn p_vg_index(&self, k: usize, i: usize) -> usize {
        self.base(k) + self.layout.p_vg + i
    }
    pub fn q_vg_index(&self, k: usize, i: usize) -> usize {
        self.base(k) + self.layout.q_vg + i
    }
    /// Position `i` in the voltage vector (owned buses first, then duplicates).
    pub fn vm_index(&self, k: usize, i: usize) -> usize {
        self.base(k) + self.layout.vm + i
    }
    pub fn va_index(&self, k: usize, i: usize) -> usize {
        self.base(k) + self.layout.va + i
    }
    /// State after step `k` at owned bus position `i`.
    pub fn x_index(&self, k: usize, i: usize) -> usize {
        self.base(k) + self.layout.x + i
    }
    /// Tie auxiliary `q` (0..4 = P_from, Q_from, P_to, Q_to) of tie `t`.
    pub fn tie_index(&self, k: usize, t: usize, q: usize) -> usize {
        self.base(k) + self.layout.tie + 4 * t + q
    }

    /// Position of a global bus in this region's voltage vector.
    pub fn voltage_position(&self, bus: usize) -> Option<usize> {
        self.volt_pos.get(bus).copied().flatten()
    }

    pub fn voltage_buses(&self) -> impl Iterator<Item = usize> + '_ {
        self.owned.iter().chain(self.duplicates.iter()).copied()
    }

    pub fn reference_position(&self) -> Option<usize> {
        self.reference
    }

    pub fn vg_capacity(&self, k: usize, i: usize) -> f64 {
        self.vg_cap[(k, i)]
    }

    pub fn ramp_anchor(&self) -> Option<&[f64]> {
        self.p_gc_prev.as_deref()
    }

    pub fn gc_unit(&self, i: usize) -> &GcUnit {
        &self.gc_units[i]
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    /// Bus energy state entering step `k`, read from `point` for `k > 0`.
    fn x_before(&self, point: &DVector<f64>, k: usize, i: usize) -> f64 {
        if k == 0 {
            self.x0[i]
        } else {
            point[self.x_index(k - 1, i)]
        }
    }

    pub fn voltage(&self, point: &DVector<f64>, k: usize) -> VoltageState {
        let n = self.layout.n_volt;
        VoltageState {
            magnitude: DVector::from_fn(n, |i, _| point[self.vm_index(k, i)]),
            angle: DVector::from_fn(n, |i, _| point[self.va_index(k, i)]),
        }
    }

    fn tie_voltage(&self, point: &DVector<f64>, k: usize, tie: &TieLine) -> (VoltageState, [usize; 2]) {
        let pos = [self.volt_pos[tie.from_bus].unwrap(), self.volt_pos[tie.to_bus].unwrap()];
        let v = VoltageState {
            magnitude: DVector::from_fn(2, |i, _| point[self.vm_index(k, pos[i])]),
            angle: DVector::from_fn(2, |i, _| point[self.va_index(k, pos[i])]),
        };
        (v, pos)
    }

    /// Flows at the `from` and `to` ends of a tie, `[P_from, Q_from, P_to, Q_to]`.
    pub fn tie_flows(&self, point: &DVector<f64>, k: usize, t: usize) -> [f64; 4] {
        let tie = &self.ties[t];
        let (v, _) = self.tie_voltage(point, k, tie);
        let s = injections(&v, &tie.block).expect("two-bus block");
        [s.p_inj[0], s.q_inj[0], s.p_inj[1], s.q_inj[1]]
    }

    /// Owned-bus tie auxiliaries: `(bus position, P index, Q index)` per tie and step.
    fn tie_terms(&self, k: usize) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.ties.iter().enumerate().map(move |(t, tie)| {
            let own_from = self.volt_pos[tie.from_bus].is_some_and(|p| p < self.layout.n_own);
            let (bus, q) = if own_from { (tie.from_bus, 0) } else { (tie.to_bus, 2) };
            (self.volt_pos[bus].unwrap(), self.tie_index(k, t, q), self.tie_index(k, t, q + 1))
        })
    }

    pub fn row_labels(&self) -> Vec<RowLabel> {
        let mut out = Vec::with_capacity(self.n_eqs());
        for step in 0..self.steps {
            for &bus in &self.owned {
                out.push(RowLabel { step, kind: RowKind::State { bus } });
            }
            for &bus in &self.owned {
                out.push(RowLabel { step, kind: RowKind::Reactive { bus } });
            }
            if let Some(r) = self.reference {
                out.push(RowLabel { step, kind: RowKind::Reference { bus: self.owned[r] } });
            }
            for tie in &self.ties {
                for quantity in 0..4 {
                    out.push(RowLabel { step, kind: RowKind::TieFlow { branch: tie.branch, quantity } });
                }
            }
        }
        out
    }

    // ---- objective ----------------------------------------------------

    pub fn objective_value(&self, point: &DVector<f64>) -> f64 {
        let mut f = 0.0;
        for k in 0..self.steps {
            for (i, u) in self.gc_units.iter().enumerate() {
                let p = point[self.p_gc_index(k, i)];
                f += u.c2 * p * p + u.c1 * p + u.c0;
            }
            for i in 0..self.layout.n_dc {
                let p = point[self.p_vg_index(k, i)];
                f += self.dc_a[(k, i)] * p * p + self.dc_b[(k, i)] * p + self.dc_c[(k, i)];
            }
        }
        f
    }

    pub fn objective_gradient_vec(&self, point: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.n_vars());
        for k in 0..self.steps {
            for (i, u) in self.gc_units.iter().enumerate() {
                let j = self.p_gc_index(k, i);
                g[j] = 2.0 * u.c2 * point[j] + u.c1;
            }
            for i in 0..self.layout.n_dc {
                let j = self.p_vg_index(k, i);
                g[j] = 2.0 * self.dc_a[(k, i)] * point[j] + self.dc_b[(k, i)];
            }
        }
        g
    }

    pub fn objective_hessian_diag(&self) -> DVector<f64> {
        let mut h = DVector::zeros(self.n_vars());
        for k in 0..self.steps {
            for (i, u) in self.gc_units.iter().enumerate() {
                h[self.p_gc_index(k, i)] = 2.0 * u.c2;
            }
            for i in 0..self.layout.n_dc {
                h[self.p_vg_index(k, i)] = 2.0 * self.dc_a[(k, i)];
            }
        }
        h
    }

    // ---- equalities ---------------------------------------------------

    pub fn residual(&self, point: &DVector<f64>) -> DVector<f64> {
        let lay = self.layout;
        let mut out = DVector::zeros(self.n_eqs());
        for k in 0..self.steps {
            let r0 = k * self.m_step;
            let v = self.voltage(point, k);
            let s = injections(&v, &self.y_local).expect("region dimensions");
            let mut p_net: Vec<f64> = (0..lay.n_own).map(|i| self.p_fixed[(k, i)] - s.p_inj[i]).collect();
            let mut q_net: Vec<f64> = (0..lay.n_own).map(|i| self.q_fixed[(k, i)] - s.q_inj[i]).collect();
            for (i, &b) in self.gc_bus.iter().enumerate() {
                p_net[b] += point[self.p_gc_index(k, i)];
                q_net[b] += point[self.q_gc_index(k, i)];
            }
            for (i, &b) in self.dc_bus.iter().enumerate() {
                p_net[b] += point[self.p_vg_index(k, i)];
                q_net[b] += point[self.q_vg_index(k, i)];
            }
            for (b, jp, jq) in self.tie_terms(k) {
                p_net[b] -= point[jp];
                q_net[b] -= point[jq];
            }
            for i in 0..lay.n_own {
                out[r0 + i] = point[self.x_index(k, i)] - self.x_before(point, k, i) - self.dt * p_net[i];
                out[r0 + lay.n_own + i] = q_net[i];
            }
            let mut r = r0 + 2 * lay.n_own;
            if let Some(p) = self.reference {
                out[r] = point[self.va_index(k, p)];
                r += 1;
            }
            for t in 0..self.ties.len() {
                let flows = self.tie_flows(point, k, t);
                for (q, fl) in flows.iter().enumerate() {
                    out[r] = point[self.tie_index(k, t, q)] - fl;
                    r += 1;
                }
            }
        }
        out
    }

    pub fn jacobian(&self, point: &DVector<f64>) -> DMatrix<f64> {
        let lay = self.layout;
        let nv = lay.n_volt;
        let mut jac = DMatrix::zeros(self.n_eqs(), self.n_vars());
        for k in 0..self.steps {
            let r0 = k * self.m_step;
            let rq = r0 + lay.n_own;
            let v = self.voltage(point, k);
            let jv = injection_jacobian(&v, &self.y_local).expect("region dimensions");
            for i in 0..lay.n_own {
                jac[(r0 + i, self.x_index(k, i))] = 1.0;
                if k > 0 {
                    jac[(r0 + i, self.x_index(k - 1, i))] = -1.0;
                }
                for c in 0..nv {
                    jac[(r0 + i, self.vm_index(k, c))] = self.dt * jv[(i, c)];
                    jac[(r0 + i, self.va_index(k, c))] = self.dt * jv[(i, nv + c)];
                    jac[(rq + i, self.vm_index(k, c))] = -jv[(nv + i, c)];
                    jac[(rq + i, self.va_index(k, c))] = -jv[(nv + i, nv + c)];
                }
            }
            for (i, &b) in self.gc_bus.iter().enumerate() {
                jac[(r0 + b, self.p_gc_index(k, i))] -= self.dt;
                jac[(rq + b, self.q_gc_index(k, i))] += 1.0;
            }
            for (i, &b) in self.dc_bus.iter().enumerate() {
                jac[(r0 + b, self.p_vg_index(k, i))] -= self.dt;
                jac[(rq + b, self.q_vg_index(k, i))] += 1.0;
            }
            for (b, jp, jq) in self.tie_terms(k) {
                jac[(r0 + b, jp)] += self.dt;
                jac[(rq + b, jq)] -= 1.0;
            }
            let mut r = r0 + 2 * lay.n_own;
            if let Some(p) = self.reference {
                jac[(r, self.va_index(k, p))] = 1.0;
                r += 1;
            }
            for (t, tie) in self.ties.iter().enumerate() {
                let (v2, pos) = self.tie_voltage(point, k, tie);
                let j2 = injection_jacobian(&v2, &tie.block).expect("two-bus block");
                // Rows of j2: P_from, P_to, Q_from, Q_to.
                let src = [0, 2, 1, 3];
                for (q, &sr) in src.iter().enumerate() {
                    jac[(r, self.tie_index(k, t, q))] = 1.0;
                    for e in 0..2 {
                        jac[(r, self.vm_index(k, pos[e]))] -= j2[(sr, e)];
                        jac[(r, self.va_index(k, pos[e]))] -= j2[(sr, 2 + e)];
                    }
                    r += 1;
                }
            }
        }
        jac
    }

    pub fn hessian_contraction(&self, point: &DVector<f64>, mult: &DVector<f64>) -> DMatrix<f64> {
        let lay = self.layout;
        let nv = lay.n_volt;
        let n = self.n_vars();
        let mut h = DMatrix::zeros(n, n);
        for k in 0..self.steps {
            let r0 = k * self.m_step;
            let mp = DVector::from_fn(nv, |i, _| if i < lay.n_own { self.dt * mult[r0 + i] } else { 0.0 });
            let mq = DVector::from_fn(nv, |i, _| if i < lay.n_own { -mult[r0 + lay.n_own + i] } else { 0.0 });
            if mp.iter().chain(mq.iter()).any(|&v| v != 0.0) {
                let hv = injection_hessian_contraction(&self.voltage(point, k), &self.y_local, &mp, &mq)
                    .expect("region dimensions");
                let col = |c: usize| if c < nv { self.vm_index(k, c) } else { self.va_index(k, c - nv) };
                for a in 0..2 * nv {
                    for b in 0..2 * nv {
                        let v = hv[(a, b)];
                        if v != 0.0 {
                            h[(col(a), col(b))] += v;
                        }
                    }
                }
            }
            let mut r = r0 + 2 * lay.n_own + usize::from(self.reference.is_some());
            for tie in &self.ties {
                let (v2, pos) = self.tie_voltage(point, k, tie);
                let mp2 = DVector::from_vec(vec![-mult[r], -mult[r + 2]]);
                let mq2 = DVector::from_vec(vec![-mult[r + 1], -mult[r + 3]]);
                let h2 = injection_hessian_contraction(&v2, &tie.block, &mp2, &mq2).expect("two-bus block");
                let col = |c: usize| if c < 2 { self.vm_index(k, pos[c]) } else { self.va_index(k, pos[c - 2]) };
                for a in 0..4 {
                    for b in 0..4 {
                        h[(col(a), col(b))] += h2[(a, b)];
                    }
                }
                r += 4;
            }
        }
        h
    }

    // ---- bounds and linear rows -----------------------------------------

    pub fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let n = self.n_vars();
        let lay = self.layout;
        let mut lo = DVector::from_element(n, -INFINITE_BOUND);
        let mut hi = DVector::from_element(n, INFINITE_BOUND);
        for k in 0..self.steps {
            for (i, u) in self.gc_units.iter().enumerate() {
                lo[self.p_gc_index(k, i)] = u.p_min;
                hi[self.p_gc_index(k, i)] = u.p_max;
                lo[self.q_gc_index(k, i)] = u.q_min;
                hi[self.q_gc_index(k, i)] = u.q_max;
            }
            for i in 0..lay.n_dc {
                lo[self.p_vg_index(k, i)] = 0.0;
                hi[self.p_vg_index(k, i)] = self.vg_cap[(k, i)];
                if self.reactive_vg == ReactiveVg::Free {
                    let q = self.q_vg_cap[(k, i)];
                    lo[self.q_vg_index(k, i)] = q.min(0.0);
                    hi[self.q_vg_index(k, i)] = q.max(0.0);
                }
            }
            for i in 0..lay.n_volt {
                lo[self.vm_index(k, i)] = self.v_min[i];
                hi[self.vm_index(k, i)] = self.v_max[i];
            }
            for i in 0..lay.n_own {
                lo[self.x_index(k, i)] = self.x_min[i];
                hi[self.x_index(k, i)] = self.x_max[i];
            }
        }
        (lo, hi)
    }

    /// Ramp rows for every generator and step, in step-major order.
    pub fn ramp_rows(&self) -> Vec<LinearRow> {
        let mut rows = Vec::new();
        for k in 0..self.steps {
            for (i, u) in self.gc_units.iter().enumerate() {
                let (lo, hi) = (scaled(self.dt, u.r_min), scaled(self.dt, u.r_max));
                if lo <= -INFINITE_BOUND && hi >= INFINITE_BOUND {
                    continue;
                }
                let j = self.p_gc_index(k, i);
                if k == 0 {
                    let Some(prev) = &self.p_gc_prev else { continue };
                    rows.push(LinearRow { coeffs: vec![(j, 1.0)], lower: shift(lo, prev[i]), upper: shift(hi, prev[i]) });
                } else {
                    rows.push(LinearRow { coeffs: vec![(j, 1.0), (self.p_gc_index(k - 1, i), -1.0)], lower: lo, upper: hi });
                }
            }
        }
        rows
    }

    pub fn reactive_vg_rows(&self) -> Vec<LinearRow> {
        if self.reactive_vg != ReactiveVg::PowerFactor {
            return Vec::new();
        }
        let mut rows = Vec::new();
        for k in 0..self.steps {
            for i in 0..self.layout.n_dc {
                rows.push(LinearRow {
                    coeffs: vec![(self.q_vg_index(k, i), 1.0), (self.p_vg_index(k, i), -self.vg_ratio[(k, i)])],
                    lower: 0.0,
                    upper: 0.0,
                });
            }
        }
        rows
    }

    pub fn linear_rows_all(&self) -> Vec<LinearRow> {
        let mut rows = self.ramp_rows();
        rows.extend(self.reactive_vg_rows());
        rows
    }

    // ---- starting points --------------------------------------------------

    /// Flat start: unit voltage magnitudes, zero angles, generation and
    /// virtual generation at the midpoints of their bounds, state at `x0`,
    /// tie auxiliaries consistent with the flat voltages.
    pub fn flat_start(&self) -> DVector<f64> {
        let (lo, hi) = self.bounds();
        let mut x = DVector::zeros(self.n_vars());
        for k in 0..self.steps {
            for (i, u) in self.gc_units.iter().enumerate() {
                x[self.p_gc_index(k, i)] = 0.5 * (u.p_min + u.p_max);
                x[self.q_gc_index(k, i)] = 0.5 * (u.q_min + u.q_max);
            }
            for i in 0..self.layout.n_dc {
                let p = 0.5 * self.vg_cap[(k, i)];
                x[self.p_vg_index(k, i)] = p;
                x[self.q_vg_index(k, i)] = match self.reactive_vg {
                    ReactiveVg::PowerFactor => self.vg_ratio[(k, i)] * p,
                    ReactiveVg::Free => 0.5 * self.q_vg_cap[(k, i)],
                };
            }
            for i in 0..self.layout.n_volt {
                let j = self.vm_index(k, i);
                x[j] = 1.0f64.clamp(lo[j], hi[j]);
            }
            for i in 0..self.layout.n_own {
                x[self.x_index(k, i)] = self.x0[i].clamp(self.x_min[i], self.x_max[i]);
            }
        }
        self.refresh_ties(&mut x);
        x
    }

    /// Overwrite the tie auxiliaries with the flows implied by the voltages.
    pub fn refresh_ties(&self, x: &mut DVector<f64>) {
        for k in 0..self.steps {
            for t in 0..self.ties.len() {
                let f = self.tie_flows(x, k, t);
                for (q, v) in f.iter().enumerate() {
                    x[self.tie_index(k, t, q)] = *v;
                }
            }
        }
    }

    /// Per-step fixed injection at owned buses (for energy accounting).
    pub fn fixed_injection(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        let n = self.layout.n_own;
        ((0..n).map(|i| self.p_fixed[(k, i)]).collect(), (0..n).map(|i| self.q_fixed[(k, i)]).collect())
    }

    /// Active power leaving each owned bus through internal branches.
    pub fn internal_injection(&self, point: &DVector<f64>, k: usize) -> Vec<f64> {
        let s = injections(&self.voltage(point, k), &self.y_local).expect("region dimensions");
        (0..self.layout.n_own).map(|i| s.p_inj[i]).collect()
    }
}

fn scaled(dt: f64, r: f64) -> f64 {
    if r.is_infinite() || r.abs() >= INFINITE_BOUND {
        r.signum() * INFINITE_BOUND
    } else {
        dt * r
    }
}

fn shift(limit: f64, by: f64) -> f64 {
    if limit.abs() >= INFINITE_BOUND {
        limit
    } else {
        limit + by
    }
}

impl NlpInstance for Region {
    fn num_vars(&self) -> usize {
        self.n_vars()
    }
    fn num_eqs(&self) -> usize {
        self.n_eqs()
    }
    fn objective(&self, x: &DVector<f64>) -> f64 {
        self.objective_value(x)
    }
    fn objective_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.objective_gradient_vec(x)
    }
    fn objective_hessian(&self, _: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.objective_hessian_diag())
    }
    fn eq_residual(&self, x: &DVector<f64>) -> DVector<f64> {
        self.residual(x)
    }
    fn eq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.jacobian(x)
    }
    fn eq_hessian_contraction(&self, x: &DVector<f64>, mult: &DVector<f64>) -> DMatrix<f64> {
        self.hessian_contraction(x, mult)
    }
    fn lower_bounds(&self) -> DVector<f64> {
        self.bounds().0
    }
    fn upper_bounds(&self) -> DVector<f64> {
        self.bounds().1
    }
    fn linear_rows(&self) -> Vec<LinearRow> {
        self.linear_rows_all()
    }
    fn lagrangian_hessian(&self, x: &DVector<f64>, obj_factor: f64, mult: &DVector<f64>) -> DMatrix<f64> {
        let mut h = self.hessian_contraction(x, mult);
        let d = self.objective_hessian_diag();
        for i in 0..d.len() {
            h[(i, i)] += obj_factor * d[i];
        }
        h
    }
}
