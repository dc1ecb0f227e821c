//! Smooth nonlinear programs with equality constraints, variable bounds and
//! two-sided linear rows, plus the primal-dual interior-point solver used by
//! both the centralized problem and every area agent.
//!
//! The Lagrangian convention throughout is
//!
//! ```text
//! L = f(x) + yᵀc(x) + wᵀ(Ax) − z_lᵀ(x − l) − z_uᵀ(u − x)
//! ```
//!
//! so bound multipliers are non-negative, and a linear-row multiplier `w` is
//! positive when the row sits at its upper limit and negative at its lower.

mod derivatives;
mod ipm;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use derivatives::{
    check_derivatives, check_derivatives_with, DerivativeFlag, DerivativeKind, DerivativeReport, FLAG_THRESHOLD,
};
pub use ipm::{solve_nlp, IpmOptions, IpmSolver, StartPoint};

/// Magnitude at or beyond which a bound is treated as absent.
pub const INFINITE_BOUND: f64 = 1e19;

/// `lower ≤ Σ coeff·x[index] ≤ upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub coeffs: Vec<(usize, f64)>,
    pub lower: f64,
    pub upper: f64,
}

impl LinearRow {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    pub fn is_equality(&self) -> bool {
        self.lower == self.upper
    }
}

pub trait NlpInstance: Sync {
    fn num_vars(&self) -> usize;
    fn num_eqs(&self) -> usize;

    fn objective(&self, x: &DVector<f64>) -> f64;
    fn objective_gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn objective_hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;

    fn eq_residual(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Dense `num_eqs × num_vars` Jacobian.
    fn eq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// `Σ_i mult[i]·∇²c_i(x)`.
    fn eq_hessian_contraction(&self, x: &DVector<f64>, mult: &DVector<f64>) -> DMatrix<f64>;

    fn lower_bounds(&self) -> DVector<f64>;
    fn upper_bounds(&self) -> DVector<f64>;

    fn linear_rows(&self) -> Vec<LinearRow> {
        Vec::new()
    }

    /// `obj_factor·∇²f + Σ mult[i]·∇²c_i`.
    fn lagrangian_hessian(&self, x: &DVector<f64>, obj_factor: f64, mult: &DVector<f64>) -> DMatrix<f64> {
        let mut h = self.eq_hessian_contraction(x, mult);
        if obj_factor != 0.0 {
            h += self.objective_hessian(x) * obj_factor;
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct KktPoint {
    pub primal: DVector<f64>,
    pub eq_multipliers: DVector<f64>,
    pub linear_multipliers: DVector<f64>,
    pub lower_multipliers: DVector<f64>,
    pub upper_multipliers: DVector<f64>,
    pub kkt_residual: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub objective: f64,
    pub message: String,
}

impl KktPoint {
    /// A point with all multipliers zero, for evaluating residuals of a bare
    /// primal vector.
    pub fn primal_only(instance: &dyn NlpInstance, primal: DVector<f64>) -> Self {
        let n = instance.num_vars();
        Self {
            objective: instance.objective(&primal),
            primal,
            eq_multipliers: DVector::zeros(instance.num_eqs()),
            linear_multipliers: DVector::zeros(instance.linear_rows().len()),
            lower_multipliers: DVector::zeros(n),
            upper_multipliers: DVector::zeros(n),
            kkt_residual: f64::INFINITY,
            status: SolveStatus::MaxIter,
            iterations: 0,
            message: String::new(),
        }
    }

    pub fn is_converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Components of the optimality error, each as a max-norm.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KktComponents {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
    pub dual_sign: f64,
    /// Divisor applied to stationarity in [`kkt_residual`].
    pub dual_scale: f64,
    /// Divisor applied to complementarity in [`kkt_residual`].
    pub complementarity_scale: f64,
}

impl KktComponents {
    pub fn combined(&self) -> f64 {
        (self.stationarity / self.dual_scale)
            .max(self.feasibility)
            .max(self.complementarity / self.complementarity_scale)
            .max(self.dual_sign)
    }
}

const SCALE_CAP: f64 = 100.0;

pub fn kkt_components(instance: &dyn NlpInstance, point: &KktPoint) -> KktComponents {
    let x = &point.primal;
    let n = instance.num_vars();
    let lo = instance.lower_bounds();
    let hi = instance.upper_bounds();
    let rows = instance.linear_rows();

    let mut grad = instance.objective_gradient(x);
    let c = instance.eq_residual(x);
    if !c.is_empty() {
        grad += instance.eq_jacobian(x).tr_mul(&point.eq_multipliers);
    }
    let mut feas = c.amax();
    let mut comp: f64 = 0.0;
    let mut sign: f64 = 0.0;
    for (r, row) in rows.iter().enumerate() {
        let w = point.linear_multipliers[r];
        for &(j, a) in &row.coeffs {
            grad[j] += w * a;
        }
        let v = row.value(x);
        feas = feas.max(row.lower - v).max(v - row.upper);
        if !row.is_equality() {
            if w > 0.0 {
                comp = comp.max(if row.upper < INFINITE_BOUND { w * (row.upper - v) } else { w });
            } else if w < 0.0 {
                comp = comp.max(if row.lower > -INFINITE_BOUND { -w * (v - row.lower) } else { -w });
            }
        }
    }
    for j in 0..n {
        let (zl, zu) = (point.lower_multipliers[j], point.upper_multipliers[j]);
        grad[j] += zu - zl;
        sign = sign.max(-zl).max(-zu);
        if lo[j] > -INFINITE_BOUND {
            feas = feas.max(lo[j] - x[j]);
            comp = comp.max((zl * (x[j] - lo[j])).abs());
        } else {
            comp = comp.max(zl.abs());
        }
        if hi[j] < INFINITE_BOUND {
            feas = feas.max(x[j] - hi[j]);
            comp = comp.max((zu * (hi[j] - x[j])).abs());
        } else {
            comp = comp.max(zu.abs());
        }
    }

    let n_mult = c.len() + rows.len() + 2 * n;
    let sum_all = point.eq_multipliers.lp_norm(1)
        + point.linear_multipliers.lp_norm(1)
        + point.lower_multipliers.lp_norm(1)
        + point.upper_multipliers.lp_norm(1);
    let sum_bound = point.lower_multipliers.lp_norm(1) + point.upper_multipliers.lp_norm(1);
    let dual_scale = if n_mult == 0 { 1.0 } else { SCALE_CAP.max(sum_all / n_mult as f64) / SCALE_CAP };
    let complementarity_scale = if n == 0 { 1.0 } else { SCALE_CAP.max(sum_bound / (2 * n) as f64) / SCALE_CAP };

    KktComponents {
        stationarity: if n == 0 { 0.0 } else { grad.amax() },
        feasibility: feas.max(0.0),
        complementarity: comp,
        dual_sign: sign,
        dual_scale,
        complementarity_scale,
    }
}

/// Max-norm optimality error of `point`.
///
/// Stationarity and complementarity are divided by scale factors that grow
/// with the average multiplier magnitude once it exceeds 100, so problems
/// with large prices are judged by relative rather than absolute dual
/// error. Primal feasibility is never scaled.
pub fn kkt_residual(instance: &dyn NlpInstance, point: &KktPoint) -> f64 {
    kkt_components(instance, point).combined()
}
