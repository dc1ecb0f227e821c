use nalgebra::DVector;
use serde::Serialize;

use super::NlpInstance;

/// Entries with relative error above this are flagged.
pub const FLAG_THRESHOLD: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeKind {
    Gradient,
    Jacobian,
    Hessian,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivativeFlag {
    pub kind: DerivativeKind,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub finite_difference: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct DerivativeReport {
    pub flags: Vec<DerivativeFlag>,
    pub max_gradient_error: f64,
    pub max_jacobian_error: f64,
    pub max_hessian_error: f64,
    pub entries_checked: usize,
}

impl DerivativeReport {
    pub fn max_error(&self) -> f64 {
        self.max_gradient_error.max(self.max_jacobian_error).max(self.max_hessian_error)
    }

    pub fn is_clean(&self) -> bool {
        self.flags.is_empty()
    }
}

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Multipliers used when checking the constraint Hessian contraction.
pub fn probe_multipliers(m: usize) -> DVector<f64> {
    DVector::from_fn(m, |i, _| ((i + 1) as f64).sin())
}

/// Compare analytic derivatives against central differences of step
/// `fd_step`.
///
/// The gradient and Jacobian are differenced from the objective and residual
/// values; the Lagrangian Hessian (objective weight 1, constraint weights
/// `sin(i + 1)`) is differenced from the analytic gradient and Jacobian.
pub fn check_derivatives(instance: &dyn NlpInstance, point: &DVector<f64>, fd_step: f64) -> DerivativeReport {
    check_derivatives_with(instance, point, fd_step, FLAG_THRESHOLD)
}

/// [`check_derivatives`] with a custom flag threshold.
pub fn check_derivatives_with(
    instance: &dyn NlpInstance,
    point: &DVector<f64>,
    fd_step: f64,
    threshold: f64,
) -> DerivativeReport {
    let n = instance.num_vars();
    let m = instance.num_eqs();
    let mut report = DerivativeReport::default();
    let mult = probe_multipliers(m);

    let grad = instance.objective_gradient(point);
    let jac = instance.eq_jacobian(point);
    let hess = instance.lagrangian_hessian(point, 1.0, &mult);
    let lagrangian_gradient = |x: &DVector<f64>| {
        let mut g = instance.objective_gradient(x);
        if m > 0 {
            g += instance.eq_jacobian(x).tr_mul(&mult);
        }
        g
    };

    let record = |report: &mut DerivativeReport, kind, row, col, a: f64, fd: f64| {
        let e = rel_error(a, fd);
        report.entries_checked += 1;
        let slot = match kind {
            DerivativeKind::Gradient => &mut report.max_gradient_error,
            DerivativeKind::Jacobian => &mut report.max_jacobian_error,
            DerivativeKind::Hessian => &mut report.max_hessian_error,
        };
        *slot = slot.max(e);
        if !(e <= threshold) {
            report.flags.push(DerivativeFlag { kind, row, col, analytic: a, finite_difference: fd, rel_error: e });
        }
    };

    for j in 0..n {
        let mut xp = point.clone();
        let mut xm = point.clone();
        xp[j] += fd_step;
        xm[j] -= fd_step;
        let h2 = xp[j] - xm[j];

        let dg = (instance.objective(&xp) - instance.objective(&xm)) / h2;
        record(&mut report, DerivativeKind::Gradient, 0, j, grad[j], dg);

        if m > 0 {
            let dc = (instance.eq_residual(&xp) - instance.eq_residual(&xm)) / h2;
            for i in 0..m {
                record(&mut report, DerivativeKind::Jacobian, i, j, jac[(i, j)], dc[i]);
            }
        }

        let dl = (lagrangian_gradient(&xp) - lagrangian_gradient(&xm)) / h2;
        for i in 0..n {
            record(&mut report, DerivativeKind::Hessian, i, j, hess[(i, j)], dl[i]);
        }
    }
    report
}
