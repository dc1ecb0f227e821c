//! Primal-dual interior-point method with exact Hessians.
//!
//! Linear rows with distinct limits are lifted to equalities `a·x − s = 0`
//! on bounded slacks, rows with equal limits become plain equalities, and
//! variables whose bounds coincide are pinned by an identity row. The lifted
//! problem `min f(w) s.t. C(w) = 0, l ≤ w ≤ u` is then solved by a
//! barrier method with a monotone barrier schedule, Bunch–Kaufman inertia
//! correction of the Newton matrix, and an ℓ1-merit backtracking line search
//! with a single second-order correction.

use log::{debug, trace};
use nalgebra::{DMatrix, DVector};

use super::{kkt_residual, KktPoint, LinearRow, NlpInstance, SolveStatus, INFINITE_BOUND};
use crate::linalg::{reverse_cuthill_mckee, Inertia, SymmetricFactor};

#[derive(Debug, Clone, PartialEq)]
pub struct IpmOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Initial barrier parameter.
    pub mu_init: f64,
    /// Absolute and relative distance by which the start is pushed inside
    /// its bounds.
    pub bound_push: f64,
    pub bound_frac: f64,
    /// First Hessian shift tried when the inertia is wrong.
    pub delta_min: f64,
    pub delta_max: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200, mu_init: 0.1, bound_push: 1e-2, bound_frac: 1e-2, delta_min: 1e-8, delta_max: 1e20 }
    }
}

impl IpmOptions {
    /// Settings for a start that is already close to a solution.
    pub fn warm(tol: f64, max_iter: usize) -> Self {
        Self { tol, max_iter, mu_init: 1e-4, bound_push: 1e-6, bound_frac: 1e-6, ..Self::default() }
    }
}

/// Initial primal point with optional multiplier estimates.
#[derive(Debug, Clone)]
pub struct StartPoint {
    pub primal: DVector<f64>,
    pub eq_multipliers: Option<DVector<f64>>,
    pub linear_multipliers: Option<DVector<f64>>,
    pub lower_multipliers: Option<DVector<f64>>,
    pub upper_multipliers: Option<DVector<f64>>,
}

impl StartPoint {
    pub fn primal(x: DVector<f64>) -> Self {
        Self { primal: x, eq_multipliers: None, linear_multipliers: None, lower_multipliers: None, upper_multipliers: None }
    }

    pub fn from_kkt(p: &KktPoint) -> Self {
        Self {
            primal: p.primal.clone(),
            eq_multipliers: Some(p.eq_multipliers.clone()),
            linear_multipliers: Some(p.linear_multipliers.clone()),
            lower_multipliers: Some(p.lower_multipliers.clone()),
            upper_multipliers: Some(p.upper_multipliers.clone()),
        }
    }

    fn has_duals(&self) -> bool {
        self.eq_multipliers.is_some()
    }
}

impl From<DVector<f64>> for StartPoint {
    fn from(x: DVector<f64>) -> Self {
        Self::primal(x)
    }
}

/// Solve from a primal start with default settings apart from `tol` and
/// `max_iter`.
pub fn solve_nlp(instance: &dyn NlpInstance, start: &DVector<f64>, tol: f64, max_iter: usize) -> KktPoint {
    IpmSolver::new(IpmOptions { tol, max_iter, ..IpmOptions::default() }).solve(instance, &StartPoint::primal(start.clone()))
}

#[derive(Debug, Clone, Default)]
pub struct IpmSolver {
    pub options: IpmOptions,
}

const KAPPA_EPS: f64 = 10.0;
const KAPPA_MU: f64 = 0.2;
const THETA_MU: f64 = 1.5;
const KAPPA_SIGMA: f64 = 1e10;
const ARMIJO: f64 = 1e-4;
const MAX_LINE_SEARCH_FAILURES: usize = 5;
const FIXED_TOL: f64 = 1e-10;
/// Largest constraint-block regularization tried before raising the Hessian shift.
const DELTA_C_MAX: f64 = 1e-4;

/// The problem in lifted form over `w = [x; s]`.
struct Lifted<'a> {
    inst: &'a dyn NlpInstance,
    n: usize,
    rows: Vec<LinearRow>,
    eq_rows: Vec<usize>,
    ineq_rows: Vec<usize>,
    fixed: Vec<usize>,
    fixed_value: Vec<f64>,
    m_c: usize,
    nw: usize,
    m: usize,
    lo: DVector<f64>,
    hi: DVector<f64>,
    has_lo: Vec<bool>,
    has_hi: Vec<bool>,
}

impl<'a> Lifted<'a> {
    fn new(inst: &'a dyn NlpInstance) -> Result<Self, String> {
        let n = inst.num_vars();
        let m_c = inst.num_eqs();
        let rows = inst.linear_rows();
        let xl = inst.lower_bounds();
        let xu = inst.upper_bounds();
        if xl.len() != n || xu.len() != n {
            return Err(format!("bound vectors have {}/{} entries for {n} variables", xl.len(), xu.len()));
        }
        let mut eq_rows = Vec::new();
        let mut ineq_rows = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            if row.lower > row.upper {
                return Err(format!("linear row {r} has lower {} > upper {}", row.lower, row.upper));
            }
            if row.coeffs.iter().any(|&(j, _)| j >= n) {
                return Err(format!("linear row {r} references a variable beyond {n}"));
            }
            if row.is_equality() {
                eq_rows.push(r);
            } else {
                ineq_rows.push(r);
            }
        }
        let mut fixed = Vec::new();
        let mut fixed_value = Vec::new();
        let nw = n + ineq_rows.len();
        let mut lo = DVector::from_element(nw, -INFINITE_BOUND);
        let mut hi = DVector::from_element(nw, INFINITE_BOUND);
        for j in 0..n {
            if xl[j] > xu[j] {
                return Err(format!("variable {j} has lower bound {} > upper {}", xl[j], xu[j]));
            }
            if xu[j] - xl[j] <= FIXED_TOL {
                fixed.push(j);
                fixed_value.push(0.5 * (xl[j] + xu[j]));
            } else {
                lo[j] = xl[j];
                hi[j] = xu[j];
            }
        }
        for (k, &r) in ineq_rows.iter().enumerate() {
            lo[n + k] = rows[r].lower;
            hi[n + k] = rows[r].upper;
        }
        let has_lo = lo.iter().map(|&v| v > -INFINITE_BOUND).collect();
        let has_hi = hi.iter().map(|&v| v < INFINITE_BOUND).collect();
        let m = m_c + eq_rows.len() + ineq_rows.len() + fixed.len();
        Ok(Self { inst, n, rows, eq_rows, ineq_rows, fixed, fixed_value, m_c, nw, m, lo, hi, has_lo, has_hi })
    }

    fn x(&self, w: &DVector<f64>) -> DVector<f64> {
        w.rows(0, self.n).into_owned()
    }

    fn objective(&self, w: &DVector<f64>) -> f64 {
        self.inst.objective(&self.x(w))
    }

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let g = self.inst.objective_gradient(&self.x(w));
        let mut out = DVector::zeros(self.nw);
        out.rows_mut(0, self.n).copy_from(&g);
        out
    }

    fn constraints(&self, w: &DVector<f64>) -> DVector<f64> {
        let x = self.x(w);
        let mut out = DVector::zeros(self.m);
        if self.m_c > 0 {
            out.rows_mut(0, self.m_c).copy_from(&self.inst.eq_residual(&x));
        }
        let mut i = self.m_c;
        for &r in &self.eq_rows {
            out[i] = self.rows[r].value(&x) - self.rows[r].lower;
            i += 1;
        }
        for (k, &r) in self.ineq_rows.iter().enumerate() {
            out[i] = self.rows[r].value(&x) - w[self.n + k];
            i += 1;
        }
        for (&j, &v) in self.fixed.iter().zip(&self.fixed_value) {
            out[i] = x[j] - v;
            i += 1;
        }
        out
    }

    fn jacobian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let x = self.x(w);
        let mut jac = DMatrix::zeros(self.m, self.nw);
        if self.m_c > 0 {
            jac.view_mut((0, 0), (self.m_c, self.n)).copy_from(&self.inst.eq_jacobian(&x));
        }
        let mut i = self.m_c;
        for &r in &self.eq_rows {
            for &(j, a) in &self.rows[r].coeffs {
                jac[(i, j)] += a;
            }
            i += 1;
        }
        for (k, &r) in self.ineq_rows.iter().enumerate() {
            for &(j, a) in &self.rows[r].coeffs {
                jac[(i, j)] += a;
            }
            jac[(i, self.n + k)] = -1.0;
            i += 1;
        }
        for &j in &self.fixed {
            jac[(i, j)] = 1.0;
            i += 1;
        }
        jac
    }

    fn hessian(&self, w: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
        let x = self.x(w);
        let yc = y.rows(0, self.m_c).into_owned();
        let h = self.inst.lagrangian_hessian(&x, 1.0, &yc);
        let mut out = DMatrix::zeros(self.nw, self.nw);
        out.view_mut((0, 0), (self.n, self.n)).copy_from(&h);
        out
    }

    fn barrier(&self, w: &DVector<f64>, mu: f64) -> f64 {
        let mut b = 0.0;
        for i in 0..self.nw {
            if self.has_lo[i] {
                b -= (w[i] - self.lo[i]).ln();
            }
            if self.has_hi[i] {
                b -= (self.hi[i] - w[i]).ln();
            }
        }
        mu * b
    }

    /// Map lifted iterates back to original-space multipliers.
    fn kkt_point(&self, w: &DVector<f64>, y: &DVector<f64>, zl: &DVector<f64>, zu: &DVector<f64>) -> KktPoint {
        let n = self.n;
        let x = self.x(w);
        let mut lin = DVector::zeros(self.rows.len());
        let mut i = self.m_c;
        for &r in &self.eq_rows {
            lin[r] = y[i];
            i += 1;
        }
        for &r in &self.ineq_rows {
            // Stationarity in the slack gives y = z_u − z_l.
            lin[r] = y[i];
            i += 1;
        }
        let mut lower = zl.rows(0, n).into_owned();
        let mut upper = zu.rows(0, n).into_owned();
        for &j in &self.fixed {
            let v = y[i];
            upper[j] = v.max(0.0);
            lower[j] = (-v).max(0.0);
            i += 1;
        }
        KktPoint {
            objective: self.inst.objective(&x),
            primal: x,
            eq_multipliers: y.rows(0, self.m_c).into_owned(),
            linear_multipliers: lin,
            lower_multipliers: lower,
            upper_multipliers: upper,
            kkt_residual: f64::INFINITY,
            status: SolveStatus::MaxIter,
            iterations: 0,
            message: String::new(),
        }
    }
}

struct Iterate {
    w: DVector<f64>,
    y: DVector<f64>,
    zl: DVector<f64>,
    zu: DVector<f64>,
    f: f64,
    g: DVector<f64>,
    c: DVector<f64>,
    jac: DMatrix<f64>,
}

fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn push_inside(v: f64, lo: f64, hi: f64, has_lo: bool, has_hi: bool, push: f64, frac: f64) -> f64 {
    let mut out = v;
    let width = if has_lo && has_hi { hi - lo } else { f64::INFINITY };
    if has_lo {
        let p = (push * lo.abs().max(1.0)).min(frac * width);
        out = out.max(lo + p);
    }
    if has_hi {
        let p = (push * hi.abs().max(1.0)).min(frac * width);
        out = out.min(hi - p);
    }
    if has_lo && has_hi && !(out > lo && out < hi) {
        out = 0.5 * (lo + hi);
    }
    out
}

impl IpmSolver {
    pub fn new(options: IpmOptions) -> Self {
        Self { options }
    }

    pub fn solve(&self, instance: &dyn NlpInstance, start: &StartPoint) -> KktPoint {
        let fail = |msg: String, x: DVector<f64>| {
            let mut p = KktPoint::primal_only(instance, x);
            p.status = SolveStatus::Infeasible;
            p.message = msg;
            p
        };
        let lifted = match Lifted::new(instance) {
            Ok(l) => l,
            Err(msg) => return fail(msg, start.primal.clone()),
        };
        if start.primal.len() != lifted.n {
            return fail(format!("start has {} entries for {} variables", start.primal.len(), lifted.n), DVector::zeros(lifted.n));
        }
        self.run(&lifted, start)
    }

    fn initial(&self, lp: &Lifted, start: &StartPoint, mu: f64) -> Result<Iterate, String> {
        let o = &self.options;
        let (n, nw, m) = (lp.n, lp.nw, lp.m);
        let mut w = DVector::zeros(nw);
        for j in 0..n {
            w[j] = push_inside(start.primal[j], lp.lo[j], lp.hi[j], lp.has_lo[j], lp.has_hi[j], o.bound_push, o.bound_frac);
        }
        for (&j, &v) in lp.fixed.iter().zip(&lp.fixed_value) {
            w[j] = v;
        }
        let x = lp.x(&w);
        for (k, &r) in lp.ineq_rows.iter().enumerate() {
            let i = n + k;
            w[i] = push_inside(lp.rows[r].value(&x), lp.lo[i], lp.hi[i], lp.has_lo[i], lp.has_hi[i], o.bound_push, o.bound_frac);
        }

        let f = lp.objective(&w);
        let g = lp.gradient(&w);
        let c = lp.constraints(&w);
        if !f.is_finite() || !all_finite(&g) || !all_finite(&c) {
            return Err("non-finite objective or constraint value at the start point".into());
        }
        let jac = lp.jacobian(&w);
        if !jac.iter().all(|v| v.is_finite()) {
            return Err("non-finite constraint Jacobian at the start point".into());
        }

        let mut zl = DVector::zeros(nw);
        let mut zu = DVector::zeros(nw);
        let given = |v: &Option<DVector<f64>>, j: usize| v.as_ref().map_or(0.0, |z| z[j]);
        let lin_given = |r: usize| start.linear_multipliers.as_ref().map_or(0.0, |z| z[r]);
        for i in 0..nw {
            let (gl, gu) = if i < n {
                (given(&start.lower_multipliers, i), given(&start.upper_multipliers, i))
            } else {
                let wv = lin_given(lp.ineq_rows[i - n]);
                ((-wv).max(0.0), wv.max(0.0))
            };
            if lp.has_lo[i] {
                zl[i] = gl.max(mu / (w[i] - lp.lo[i]));
            }
            if lp.has_hi[i] {
                zu[i] = gu.max(mu / (lp.hi[i] - w[i]));
            }
        }

        let y = if start.has_duals() {
            let mut y = DVector::zeros(m);
            if let Some(ye) = &start.eq_multipliers {
                y.rows_mut(0, lp.m_c).copy_from(ye);
            }
            let mut i = lp.m_c;
            for &r in lp.eq_rows.iter().chain(&lp.ineq_rows) {
                y[i] = lin_given(r);
                i += 1;
            }
            for &j in &lp.fixed {
                y[i] = given(&start.upper_multipliers, j) - given(&start.lower_multipliers, j);
                i += 1;
            }
            y
        } else {
            least_squares_multipliers(&g, &jac, &zl, &zu)
        };
        Ok(Iterate { w, y, zl, zu, f, g, c, jac })
    }

    fn run(&self, lp: &Lifted, start: &StartPoint) -> KktPoint {
        let o = &self.options;
        let (nw, m) = (lp.nw, lp.m);
        let mut mu = o.mu_init;
        let mu_min = o.tol / 10.0;
        let mut tau = (1.0 - mu).max(0.99);
        let mut it = match self.initial(lp, start, mu) {
            Ok(it) => it,
            Err(msg) => {
                let mut p = KktPoint::primal_only(lp.inst, start.primal.clone());
                p.status = SolveStatus::Infeasible;
                p.message = msg;
                return p;
            }
        };
        let mut nu: f64 = 1.0;
        let mut last_delta: f64 = 0.0;
        let mut failures = 0;
        let mut best: Option<(f64, KktPoint)> = None;

        for iter in 0..=o.max_iter {
            let e0 = self.error(lp, &it, 0.0);
            let mut point = lp.kkt_point(&it.w, &it.y, &it.zl, &it.zu);
            point.iterations = iter;
            point.kkt_residual = kkt_residual(lp.inst, &point);
            trace!("ipm iter {iter}: f={:.10e} E0={e0:.3e} mu={mu:.3e} |c|={:.3e}", it.f, it.c.amax());
            if e0 <= o.tol && point.kkt_residual <= o.tol {
                point.status = SolveStatus::Converged;
                point.message = format!("converged in {iter} iterations");
                return point;
            }
            let score = point.kkt_residual.max(it.c.amax());
            if best.as_ref().is_none_or(|(s, _)| score < *s) {
                best = Some((score, point));
            }
            if iter == o.max_iter {
                break;
            }

            while mu > mu_min && self.error(lp, &it, mu) <= KAPPA_EPS * mu {
                mu = mu_min.max((KAPPA_MU * mu).min(mu.powf(THETA_MU)));
                tau = (1.0 - mu).max(0.99);
            }

            // Newton matrix with inertia correction.
            let hess = lp.hessian(&it.w, &it.y);
            let mut sigma: DVector<f64> = DVector::zeros(nw);
            for i in 0..nw {
                if lp.has_lo[i] {
                    sigma[i] += it.zl[i] / (it.w[i] - lp.lo[i]);
                }
                if lp.has_hi[i] {
                    sigma[i] += it.zu[i] / (lp.hi[i] - it.w[i]);
                }
            }
            let dim = nw + m;
            let mut kkt = DMatrix::zeros(dim, dim);
            kkt.view_mut((0, 0), (nw, nw)).copy_from(&hess);
            for i in 0..nw {
                kkt[(i, i)] += sigma[i];
            }
            kkt.view_mut((nw, 0), (m, nw)).copy_from(&it.jac);
            let order = {
                let mut pattern = kkt.clone();
                for i in 0..dim {
                    pattern[(i, i)] = 1.0;
                    for j in 0..i {
                        pattern[(j, i)] = pattern[(i, j)];
                    }
                }
                reverse_cuthill_mckee(&pattern)
            };
            let Some((factor, kmat, delta_w)) = self.factor_with_correction(&kkt, &order, nw, m, mu, &mut last_delta) else {
                let (_, mut p) = best.take().unwrap();
                p.status = SolveStatus::Infeasible;
                p.message = format!("inertia correction exceeded {} at iteration {iter}", o.delta_max);
                return p;
            };

            // Right-hand side and search direction.
            let mut rhs_x = &it.g + it.jac.tr_mul(&it.y);
            for i in 0..nw {
                if lp.has_lo[i] {
                    rhs_x[i] -= mu / (it.w[i] - lp.lo[i]);
                }
                if lp.has_hi[i] {
                    rhs_x[i] += mu / (lp.hi[i] - it.w[i]);
                }
            }
            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(0, nw).copy_from(&(-&rhs_x));
            rhs.rows_mut(nw, m).copy_from(&(-&it.c));
            let sol = solve_permuted(&factor, &kmat, &order, &rhs);
            let dw = sol.rows(0, nw).into_owned();
            let dy = sol.rows(nw, m).into_owned();
            let mut dzl = DVector::zeros(nw);
            let mut dzu = DVector::zeros(nw);
            for i in 0..nw {
                if lp.has_lo[i] {
                    let gap = it.w[i] - lp.lo[i];
                    dzl[i] = mu / gap - it.zl[i] - it.zl[i] / gap * dw[i];
                }
                if lp.has_hi[i] {
                    let gap = lp.hi[i] - it.w[i];
                    dzu[i] = mu / gap - it.zu[i] + it.zu[i] / gap * dw[i];
                }
            }
            if !all_finite(&dw) || !all_finite(&dy) {
                let (_, mut p) = best.take().unwrap();
                p.status = SolveStatus::Infeasible;
                p.message = format!("non-finite search direction at iteration {iter}");
                return p;
            }

            let alpha_max = self.max_primal_step(lp, &it.w, &dw, tau);
            let alpha_z = max_dual_step(&it.zl, &dzl, tau).min(max_dual_step(&it.zu, &dzu, tau));

            // Merit function and penalty.
            let grad_phi = {
                let mut gp = it.g.clone();
                for i in 0..nw {
                    if lp.has_lo[i] {
                        gp[i] -= mu / (it.w[i] - lp.lo[i]);
                    }
                    if lp.has_hi[i] {
                        gp[i] += mu / (lp.hi[i] - it.w[i]);
                    }
                }
                gp
            };
            let theta0 = it.c.lp_norm(1);
            let slope = grad_phi.dot(&dw);
            if theta0 > 0.0 {
                let mut wdw: f64 = dw.dot(&(&hess * &dw));
                for i in 0..nw {
                    wdw += (sigma[i] + delta_w) * dw[i] * dw[i];
                }
                let needed = (slope + 0.5 * wdw.max(0.0)) / (0.9 * theta0);
                if nu < needed {
                    nu = needed + 1.0;
                }
            }
            let phi0 = it.f + lp.barrier(&it.w, mu) + nu * theta0;
            let dphi = slope - nu * theta0;
            // Roundoff allowance for f and for ν·‖c‖₁.
            let slack = 10.0 * f64::EPSILON * (phi0.abs().max(1.0) + nu * m as f64);

            let merit = |w: &DVector<f64>| -> Option<(f64, f64, DVector<f64>)> {
                let f = lp.objective(w);
                let c = lp.constraints(w);
                if !f.is_finite() || !all_finite(&c) {
                    return None;
                }
                let b = lp.barrier(w, mu);
                let v = f + b + nu * c.lp_norm(1);
                v.is_finite().then_some((v, f, c))
            };

            let mut alpha = alpha_max;
            let mut accepted: Option<(DVector<f64>, f64, f64, DVector<f64>)> = None;
            for trial in 0.. {
                let wt = &it.w + &dw * alpha;
                let eval = merit(&wt);
                if let Some((phi, f, c)) = &eval {
                    if *phi <= phi0 + ARMIJO * alpha * dphi + slack {
                        accepted = Some((wt, alpha, *f, c.clone()));
                        break;
                    }
                }
                if trial == 0 && m > 0 {
                    let worse = eval.as_ref().is_none_or(|(_, _, c)| c.lp_norm(1) >= theta0);
                    if worse {
                        if let Some((_, _, ct)) = &eval {
                            if let Some(soc) = self.second_order_correction(lp, &factor, &kmat, &order, &it.w, &dw, ct, alpha, tau) {
                                if let Some((phi, f, c)) = merit(&soc) {
                                    if phi <= phi0 + ARMIJO * alpha * dphi + slack {
                                        accepted = Some((soc, alpha, f, c));
                                        break;
                                    }
                                }
                            }
                        }
                    }
                }
                alpha *= 0.5;
                if alpha < 1e-14 * alpha_max.max(1e-300) || alpha < 1e-16 {
                    break;
                }
            }

            let (w_new, alpha, f_new, c_new) = match accepted {
                Some(a) => {
                    failures = 0;
                    a
                }
                None => {
                    failures += 1;
                    debug!("ipm iter {iter}: line search failed ({failures} in a row), taking the full step");
                    if failures >= MAX_LINE_SEARCH_FAILURES {
                        let (_, mut p) = best.take().unwrap();
                        p.status = SolveStatus::Infeasible;
                        p.message = format!("line search failed {failures} times in a row at iteration {iter}");
                        return p;
                    }
                    let wt = &it.w + &dw * alpha_max;
                    let f = lp.objective(&wt);
                    let c = lp.constraints(&wt);
                    if !f.is_finite() || !all_finite(&c) {
                        let (_, mut p) = best.take().unwrap();
                        p.status = SolveStatus::Infeasible;
                        p.message = format!("non-finite evaluation at iteration {iter}");
                        return p;
                    }
                    (wt, alpha_max, f, c)
                }
            };

            trace!("ipm iter {iter}: nu={nu:.3e} alpha={alpha:.3e} alpha_max={alpha_max:.3e} alpha_z={alpha_z:.3e} |dw|={:.3e}", dw.amax());
            it.w = w_new;
            it.y += &dy * alpha;
            it.zl += &dzl * alpha_z;
            it.zu += &dzu * alpha_z;
            for i in 0..nw {
                if lp.has_lo[i] {
                    let gap = it.w[i] - lp.lo[i];
                    it.zl[i] = it.zl[i].clamp(mu / (KAPPA_SIGMA * gap), KAPPA_SIGMA * mu / gap);
                }
                if lp.has_hi[i] {
                    let gap = lp.hi[i] - it.w[i];
                    it.zu[i] = it.zu[i].clamp(mu / (KAPPA_SIGMA * gap), KAPPA_SIGMA * mu / gap);
                }
            }
            it.f = f_new;
            it.c = c_new;
            it.g = lp.gradient(&it.w);
            it.jac = lp.jacobian(&it.w);
            if !all_finite(&it.g) || !it.jac.iter().all(|v| v.is_finite()) {
                let (_, mut p) = best.take().unwrap();
                p.status = SolveStatus::Infeasible;
                p.message = format!("non-finite derivative at iteration {}", iter + 1);
                return p;
            }
        }

        let (_, mut p) = best.unwrap();
        p.status = SolveStatus::MaxIter;
        p.message = format!("iteration limit {} reached", o.max_iter);
        p
    }

    /// Optimality error of the barrier problem with parameter `mu`.
    fn error(&self, lp: &Lifted, it: &Iterate, mu: f64) -> f64 {
        let nw = lp.nw;
        let mut stat = &it.g + it.jac.tr_mul(&it.y);
        stat -= &it.zl;
        stat += &it.zu;
        let mut comp: f64 = 0.0;
        let mut n_bounds = 0usize;
        for i in 0..nw {
            if lp.has_lo[i] {
                comp = comp.max((it.zl[i] * (it.w[i] - lp.lo[i]) - mu).abs());
                n_bounds += 1;
            }
            if lp.has_hi[i] {
                comp = comp.max((it.zu[i] * (lp.hi[i] - it.w[i]) - mu).abs());
                n_bounds += 1;
            }
        }
        let zsum = it.zl.lp_norm(1) + it.zu.lp_norm(1);
        let n_mult = lp.m + n_bounds;
        let sd = if n_mult == 0 { 1.0 } else { 100f64.max((it.y.lp_norm(1) + zsum) / n_mult as f64) / 100.0 };
        let sc = if n_bounds == 0 { 1.0 } else { 100f64.max(zsum / n_bounds as f64) / 100.0 };
        let stat_norm = if nw == 0 { 0.0 } else { stat.amax() };
        (stat_norm / sd).max(it.c.amax()).max(comp / sc)
    }

    #[allow(clippy::too_many_arguments)]
    fn factor_with_correction(
        &self,
        kkt: &DMatrix<f64>,
        order: &[usize],
        nw: usize,
        m: usize,
        mu: f64,
        last_delta: &mut f64,
    ) -> Option<(SymmetricFactor, DMatrix<f64>, f64)> {
        let o = &self.options;
        let dim = nw + m;
        let target = Inertia { positive: nw, negative: m, zero: 0 };
        let mut delta_w = 0.0;
        let mut delta_c = 0.0;
        loop {
            let kmat = DMatrix::from_fn(dim, dim, |i, j| {
                let (a, b) = (order[i], order[j]);
                let (r, c) = if a >= b { (a, b) } else { (b, a) };
                let mut v = kkt[(r, c)];
                if r == c {
                    v += if r < nw { delta_w } else { -delta_c };
                }
                v
            });
            let factor = SymmetricFactor::factor_with_tol(&kmat, 1e-20);
            let inertia = factor.inertia();
            if inertia == target {
                if delta_w > 0.0 {
                    *last_delta = delta_w;
                }
                return Some((factor, kmat, delta_w));
            }
            if (inertia.zero > 0 || inertia.negative < m) && m > 0 && delta_c < DELTA_C_MAX {
                delta_c = if delta_c == 0.0 { 1e-8 * mu.powf(0.25) } else { delta_c * 10.0 };
                continue;
            }
            delta_w = if delta_w == 0.0 {
                if *last_delta == 0.0 {
                    o.delta_min
                } else {
                    o.delta_min.max(*last_delta / 3.0)
                }
            } else {
                delta_w * 10.0
            };
            if delta_w > o.delta_max {
                return None;
            }
        }
    }

    fn max_primal_step(&self, lp: &Lifted, w: &DVector<f64>, dw: &DVector<f64>, tau: f64) -> f64 {
        let mut a: f64 = 1.0;
        for i in 0..lp.nw {
            if lp.has_lo[i] && dw[i] < 0.0 {
                a = a.min(tau * (w[i] - lp.lo[i]) / -dw[i]);
            }
            if lp.has_hi[i] && dw[i] > 0.0 {
                a = a.min(tau * (lp.hi[i] - w[i]) / dw[i]);
            }
        }
        a
    }

    #[allow(clippy::too_many_arguments)]
    fn second_order_correction(
        &self,
        lp: &Lifted,
        factor: &SymmetricFactor,
        kmat: &DMatrix<f64>,
        order: &[usize],
        w: &DVector<f64>,
        dw: &DVector<f64>,
        c_trial: &DVector<f64>,
        alpha: f64,
        tau: f64,
    ) -> Option<DVector<f64>> {
        let (nw, m) = (lp.nw, lp.m);
        let mut rhs = DVector::zeros(nw + m);
        rhs.rows_mut(nw, m).copy_from(&(-c_trial));
        let corr = solve_permuted(factor, kmat, order, &rhs);
        let d = dw * alpha + corr.rows(0, nw);
        if !all_finite(&d) {
            return None;
        }
        let a = self.max_primal_step(lp, w, &d, tau);
        Some(w + d * a)
    }
}

fn max_dual_step(z: &DVector<f64>, dz: &DVector<f64>, tau: f64) -> f64 {
    let mut a: f64 = 1.0;
    for i in 0..z.len() {
        if dz[i] < 0.0 && z[i] > 0.0 {
            a = a.min(tau * z[i] / -dz[i]);
        }
    }
    a
}

fn solve_permuted(factor: &SymmetricFactor, kmat: &DMatrix<f64>, order: &[usize], rhs: &DVector<f64>) -> DVector<f64> {
    let b = DVector::from_fn(rhs.len(), |i, _| rhs[order[i]]);
    let x = factor.solve_refined(kmat, &b, 2);
    let mut out = DVector::zeros(rhs.len());
    for (i, &o) in order.iter().enumerate() {
        out[o] = x[i];
    }
    out
}

/// Multipliers minimizing the stationarity residual at the start point.
fn least_squares_multipliers(g: &DVector<f64>, jac: &DMatrix<f64>, zl: &DVector<f64>, zu: &DVector<f64>) -> DVector<f64> {
    let (m, nw) = jac.shape();
    if m == 0 {
        return DVector::zeros(0);
    }
    let dim = nw + m;
    let mut k = DMatrix::zeros(dim, dim);
    for i in 0..nw {
        k[(i, i)] = 1.0;
    }
    k.view_mut((nw, 0), (m, nw)).copy_from(jac);
    let factor = SymmetricFactor::factor(&k);
    if factor.is_singular() {
        return DVector::zeros(m);
    }
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, nw).copy_from(&(-(g - zl + zu)));
    let sol = factor.solve_refined(&k, &rhs, 1);
    let y = sol.rows(nw, m).into_owned();
    if y.amax() > 1e3 || !all_finite(&y) {
        DVector::zeros(m)
    } else {
        y
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_problems::*;
    use super::super::{kkt_residual, NlpInstance};
    use super::*;

    #[test]
    fn clamped_quadratic_hits_its_upper_bound() {
        let p = solve_nlp(&ClampedQuadratic, &DVector::from_element(1, 0.5), 1e-8, 200);
        assert!(p.is_converged(), "{}", p.message);
        assert!((p.primal[0] - 1.0).abs() < 1e-8);
        assert!((p.upper_multipliers[0] - 2.0).abs() < 1e-6);
        assert!(p.lower_multipliers[0].abs() < 1e-6);
        assert!(p.kkt_residual <= 1e-8);
    }

    #[test]
    fn symmetric_projection() {
        let p = solve_nlp(&SymmetricProjection, &DVector::from_vec(vec![3.0, -1.0]), 1e-8, 200);
        assert!(p.is_converged(), "{}", p.message);
        assert!((p.primal[0] - 0.5).abs() < 1e-9 && (p.primal[1] - 0.5).abs() < 1e-9);
        assert!((p.eq_multipliers[0] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn mixed_instance_converges_and_meets_every_contract() {
        let inst = Mixed { gradient_fault: None };
        let p = solve_nlp(&inst, &DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0]), 1e-8, 200);
        assert!(p.is_converged(), "{}", p.message);
        assert!(kkt_residual(&inst, &p) <= 1e-8);
        assert!(inst.eq_residual(&p.primal).amax() <= 1e-8);
        assert_eq!(p.primal[3], 0.25);
        let rows = inst.linear_rows();
        assert!((rows[1].value(&p.primal) - 1.5).abs() <= 1e-8);
    }

    #[test]
    fn solves_are_bit_identical() {
        let inst = Mixed { gradient_fault: None };
        let x0 = DVector::from_vec(vec![0.5, -0.2, 0.1, 0.0]);
        let a = solve_nlp(&inst, &x0, 1e-8, 200);
        let b = solve_nlp(&inst, &x0, 1e-8, 200);
        assert_eq!(a.primal.as_slice(), b.primal.as_slice());
        assert_eq!(a.eq_multipliers.as_slice(), b.eq_multipliers.as_slice());
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn warm_start_from_solution_is_quick() {
        let inst = Mixed { gradient_fault: None };
        let cold = solve_nlp(&inst, &DVector::zeros(4), 1e-8, 200);
        let warm = IpmSolver::new(IpmOptions::warm(1e-8, 200)).solve(&inst, &StartPoint::from_kkt(&cold));
        assert!(warm.is_converged(), "{}", warm.message);
        assert!(warm.iterations <= cold.iterations);
        assert!((warm.objective - cold.objective).abs() < 1e-7);
    }

    #[test]
    fn inconsistent_bounds_are_reported() {
        struct Bad;
        impl NlpInstance for Bad {
            fn num_vars(&self) -> usize {
                1
            }
            fn num_eqs(&self) -> usize {
                0
            }
            fn objective(&self, x: &DVector<f64>) -> f64 {
                x[0]
            }
            fn objective_gradient(&self, _: &DVector<f64>) -> DVector<f64> {
                DVector::from_element(1, 1.0)
            }
            fn objective_hessian(&self, _: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::zeros(1, 1)
            }
            fn eq_residual(&self, _: &DVector<f64>) -> DVector<f64> {
                DVector::zeros(0)
            }
            fn eq_jacobian(&self, _: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::zeros(0, 1)
            }
            fn eq_hessian_contraction(&self, _: &DVector<f64>, _: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::zeros(1, 1)
            }
            fn lower_bounds(&self) -> DVector<f64> {
                DVector::from_element(1, 1.0)
            }
            fn upper_bounds(&self) -> DVector<f64> {
                DVector::from_element(1, 0.0)
            }
        }
        let p = solve_nlp(&Bad, &DVector::zeros(1), 1e-8, 10);
        assert_eq!(p.status, SolveStatus::Infeasible);
    }

    #[test]
    fn nan_objective_gives_infeasible_status() {
        struct NanObjective;
        impl NlpInstance for NanObjective {
            fn num_vars(&self) -> usize {
                1
            }
            fn num_eqs(&self) -> usize {
                0
            }
            fn objective(&self, x: &DVector<f64>) -> f64 {
                (x[0] - 3.0).sqrt()
            }
            fn objective_gradient(&self, _: &DVector<f64>) -> DVector<f64> {
                DVector::from_element(1, f64::NAN)
            }
            fn objective_hessian(&self, _: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::zeros(1, 1)
            }
            fn eq_residual(&self, _: &DVector<f64>) -> DVector<f64> {
                DVector::zeros(0)
            }
            fn eq_jacobian(&self, _: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::zeros(0, 1)
            }
            fn eq_hessian_contraction(&self, _: &DVector<f64>, _: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::zeros(1, 1)
            }
            fn lower_bounds(&self) -> DVector<f64> {
                DVector::zeros(1)
            }
            fn upper_bounds(&self) -> DVector<f64> {
                DVector::from_element(1, 1.0)
            }
        }
        let p = solve_nlp(&NanObjective, &DVector::from_element(1, 0.5), 1e-8, 10);
        assert_eq!(p.status, SolveStatus::Infeasible);
        assert!(p.message.contains("non-finite"));
    }
}
