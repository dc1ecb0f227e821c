use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::AreaSubproblem;
use crate::empc::Region;
use crate::error::{Error, Result};
use crate::linalg::floor_eigenvalues;
use crate::nlp::{IpmOptions, IpmSolver, KktPoint, LinearRow, NlpInstance, StartPoint, INFINITE_BOUND};

/// `f_i(y) + (A_iᵀλ)ᵀy + ρ/2 Σ_j σ_j (y_j − z_j)²` over the area's
/// constraints.
pub struct ProximalProblem<'a> {
    pub region: &'a Region,
    pub shift: DVector<f64>,
    pub center: DVector<f64>,
    pub rho: f64,
    pub sigma: DVector<f64>,
}

impl NlpInstance for ProximalProblem<'_> {
    fn num_vars(&self) -> usize {
        self.region.n_vars()
    }
    fn num_eqs(&self) -> usize {
        self.region.n_eqs()
    }
    fn objective(&self, x: &DVector<f64>) -> f64 {
        let mut prox = 0.0;
        for j in 0..x.len() {
            let d = x[j] - self.center[j];
            prox += self.sigma[j] * d * d;
        }
        self.region.objective_value(x) + self.shift.dot(x) + 0.5 * self.rho * prox
    }
    fn objective_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = self.region.objective_gradient_vec(x) + &self.shift;
        for j in 0..x.len() {
            g[j] += self.rho * self.sigma[j] * (x[j] - self.center[j]);
        }
        g
    }
    fn objective_hessian(&self, _: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&(self.region.objective_hessian_diag() + &self.sigma * self.rho))
    }
    fn eq_residual(&self, x: &DVector<f64>) -> DVector<f64> {
        self.region.residual(x)
    }
    fn eq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.region.jacobian(x)
    }
    fn eq_hessian_contraction(&self, x: &DVector<f64>, mult: &DVector<f64>) -> DMatrix<f64> {
        self.region.hessian_contraction(x, mult)
    }
    fn lower_bounds(&self) -> DVector<f64> {
        self.region.bounds().0
    }
    fn upper_bounds(&self) -> DVector<f64> {
        self.region.bounds().1
    }
    fn linear_rows(&self) -> Vec<LinearRow> {
        self.region.linear_rows_all()
    }
    fn lagrangian_hessian(&self, x: &DVector<f64>, obj_factor: f64, mult: &DVector<f64>) -> DMatrix<f64> {
        let mut h = self.region.hessian_contraction(x, mult);
        let d = self.region.objective_hessian_diag();
        for i in 0..d.len() {
            h[(i, i)] += obj_factor * (d[i] + self.rho * self.sigma[i]);
        }
        h
    }
}

/// What an area reports to the coordinator.
#[derive(Debug, Clone)]
pub struct LocalResult {
    pub area: usize,
    pub y: DVector<f64>,
    /// Local solver output (with multipliers), reused as the next warm start.
    pub kkt: KktPoint,
    /// Gradient of the area's own objective at `y`.
    pub gradient: DVector<f64>,
    /// Equality rows and active linear rows linearized at `y`.
    pub jacobian: DMatrix<f64>,
    /// Lagrangian Hessian with eigenvalues floored.
    pub hessian: DMatrix<f64>,
    /// Variables held fixed in the coordinator step (active or fixed bounds).
    pub active: Vec<bool>,
    /// Variable bounds of the area, used to keep coordinator steps feasible.
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub objective: f64,
}

/// Settings for one local solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub hessian_floor: f64,
    pub active_tol: f64,
}

impl Default for LocalSettings {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200, hessian_floor: 1e2, active_tol: 1e-8 }
    }
}

/// Solve the area's augmented-Lagrangian subproblem and build its local
/// quadratic model.
#[allow(clippy::too_many_arguments)]
pub fn local_step(
    sub: &AreaSubproblem,
    z: &DVector<f64>,
    lambda: &DVector<f64>,
    rho: f64,
    sigma: &DVector<f64>,
    warm: Option<&KktPoint>,
    settings: &LocalSettings,
    iteration: usize,
) -> Result<LocalResult> {
    let region = &sub.region;
    if z.len() != region.n_vars() || sigma.len() != region.n_vars() || lambda.len() != sub.n_consensus {
        return Err(Error::Dimension(format!(
            "area {}: z has {}, sigma {}, lambda {} entries",
            sub.area,
            z.len(),
            sigma.len(),
            lambda.len()
        )));
    }
    let prox = ProximalProblem {
        region,
        shift: sub.consensus_transpose(lambda),
        center: z.clone(),
        rho,
        sigma: sigma.clone(),
    };
    let warm_kkt = warm
        .map(|w| {
            let mut start = StartPoint::from_kkt(w);
            start.primal = z.clone();
            IpmSolver::new(IpmOptions::warm(settings.tol, settings.max_iter)).solve(&prox, &start)
        })
        .filter(KktPoint::is_converged);
    let kkt = warm_kkt.unwrap_or_else(|| {
        let cold = IpmSolver::new(IpmOptions { tol: settings.tol, max_iter: settings.max_iter, ..IpmOptions::default() });
        cold.solve(&prox, &StartPoint::primal(z.clone()))
    });
    if !kkt.is_converged() {
        return Err(Error::LocalSolve { area: sub.area, iteration, reason: kkt.message.clone() });
    }
    Ok(local_model(sub, kkt, settings))
}

/// Gradient, active-set Jacobian and floored Hessian at a local solution.
pub fn local_model(sub: &AreaSubproblem, kkt: KktPoint, settings: &LocalSettings) -> LocalResult {
    let region = &sub.region;
    let y = kkt.primal.clone();
    let n = region.n_vars();
    let (lo, hi) = region.bounds();
    let mut active = vec![false; n];
    for j in 0..n {
        let fixed = hi[j] - lo[j] <= 1e-10;
        let at_lo = lo[j] > -INFINITE_BOUND && {
            let gap = y[j] - lo[j];
            gap <= settings.active_tol || kkt.lower_multipliers[j] > gap
        };
        let at_hi = hi[j] < INFINITE_BOUND && {
            let gap = hi[j] - y[j];
            gap <= settings.active_tol || kkt.upper_multipliers[j] > gap
        };
        active[j] = fixed || at_lo || at_hi;
    }

    let eq_jac = region.jacobian(&y);
    let mut rows: Vec<DVector<f64>> = (0..eq_jac.nrows()).map(|i| eq_jac.row(i).transpose()).collect();
    for (r, row) in region.linear_rows_all().iter().enumerate() {
        let include = row.is_equality() || {
            let v = row.value(&y);
            let w = kkt.linear_multipliers[r];
            let up_gap = row.upper - v;
            let lo_gap = v - row.lower;
            (row.upper < INFINITE_BOUND && (up_gap <= settings.active_tol || w > up_gap))
                || (row.lower > -INFINITE_BOUND && (lo_gap <= settings.active_tol || -w > lo_gap))
        };
        if include {
            let mut a = DVector::zeros(n);
            for &(j, c) in &row.coeffs {
                a[j] += c;
            }
            rows.push(a);
        }
    }
    let jacobian = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);

    let raw = region.lagrangian_hessian(&y, 1.0, &kkt.eq_multipliers);
    let hessian = floor_eigenvalues(&raw, settings.hessian_floor);
    LocalResult {
        area: sub.area,
        gradient: region.objective_gradient_vec(&y),
        objective: region.objective_value(&y),
        y,
        kkt,
        jacobian,
        hessian,
        active,
        lower: lo,
        upper: hi,
    }
}
