use log::warn;
use nalgebra::{DMatrix, DVector};

use super::solve::{AladinConfig, AladinState};
use super::{AreaSubproblem, LocalResult};
use crate::error::{Error, Result};
use crate::linalg::{reverse_cuthill_mckee, SymmetricFactor};

/// Diagonal shift applied when the coordinator's KKT matrix is singular.
const SINGULAR_SHIFT: f64 = 1e-10;
/// Bound violation tolerated before a variable is pinned to its bound.
const BOUND_SLACK: f64 = 1e-9;
const MAX_PIN_ROUNDS: usize = 20;

/// Coordinator output.
#[derive(Debug, Clone)]
pub struct QpResult {
    /// Step for every area, zero on variables held by an active bound.
    pub delta_y: Vec<DVector<f64>>,
    pub lambda_qp: DVector<f64>,
    /// Infinity norm of the KKT residual of the solved linear system.
    pub kkt_residual: f64,
    /// Whether the diagonal shift was needed.
    pub regularized: bool,
}

/// Solve the coupled equality-constrained QP
///
/// ```text
/// min  Σ_i ½ Δy_iᵀ H_i Δy_i + g_iᵀ Δy_i + λᵀ s + μ/2 ‖s‖²
/// s.t. J_i Δy_i = 0,   Σ_i A_i (y_i + Δy_i) = s
/// ```
///
/// with a symmetric indefinite factorization. Variables held by an active
/// bound are removed. A free variable whose step would leave its bounds is
/// pinned to the bound and the system is solved again. `λ_QP` is the
/// multiplier of the coupling rows.
pub fn consensus_qp(
    subs: &[AreaSubproblem],
    locals: &[LocalResult],
    lambda: &DVector<f64>,
    mu: f64,
) -> Result<QpResult> {
    if subs.len() != locals.len() {
        return Err(Error::Dimension(format!("{} areas but {} local results", subs.len(), locals.len())));
    }
    let couplings: Vec<&[(usize, usize, f64)]> = subs.iter().map(|s| s.consensus.as_slice()).collect();
    let n_c = subs.first().map_or(0, |s| s.n_consensus);
    coupled_qp(&couplings, n_c, locals, lambda, mu)
}

/// [`consensus_qp`] on explicit coupling matrices given as
/// `(row, variable, coefficient)` triplets per area.
pub fn coupled_qp(
    couplings: &[&[(usize, usize, f64)]],
    n_c: usize,
    locals: &[LocalResult],
    lambda: &DVector<f64>,
    mu: f64,
) -> Result<QpResult> {
    if lambda.len() != n_c {
        return Err(Error::Dimension(format!("lambda has {} entries, expected {n_c}", lambda.len())));
    }
    if !(mu > 0.0) {
        return Err(Error::Input(format!("mu must be positive, got {mu}")));
    }

    let mut ay = DVector::<f64>::zeros(n_c);
    for (coupling, loc) in couplings.iter().zip(locals) {
        for &(r, j, c) in *coupling {
            ay[r] += c * loc.y[j];
        }
    }
    // Pinned steps: zero on active variables, the distance to the bound on
    // variables the step would otherwise carry across it.
    let mut pinned: Vec<Vec<Option<f64>>> =
        locals.iter().map(|l| l.active.iter().map(|&a| a.then_some(0.0)).collect()).collect();
    let mut regularized = false;
    let mut round = 0;
    loop {
        round += 1;
        let sol = solve_pinned(couplings, n_c, locals, lambda, mu, &ay, &pinned)?;
        regularized |= sol.regularized;
        let mut clipped = false;
        for (a, loc) in locals.iter().enumerate() {
            for j in 0..loc.y.len() {
                if pinned[a][j].is_some() {
                    continue;
                }
                let next = loc.y[j] + sol.delta_y[a][j];
                if next < loc.lower[j] - BOUND_SLACK {
                    pinned[a][j] = Some(loc.lower[j] - loc.y[j]);
                    clipped = true;
                } else if next > loc.upper[j] + BOUND_SLACK {
                    pinned[a][j] = Some(loc.upper[j] - loc.y[j]);
                    clipped = true;
                }
            }
        }
        if !clipped || round >= MAX_PIN_ROUNDS {
            return Ok(QpResult { regularized, ..sol });
        }
    }
}

/// One KKT solve with the pinned variables moved to the right-hand side.
fn solve_pinned(
    couplings: &[&[(usize, usize, f64)]],
    n_c: usize,
    locals: &[LocalResult],
    lambda: &DVector<f64>,
    mu: f64,
    ay: &DVector<f64>,
    pinned: &[Vec<Option<f64>>],
) -> Result<QpResult> {
    // Free variables of each area, mapped to positions in the reduced vector.
    let mut free: Vec<Vec<usize>> = Vec::with_capacity(locals.len());
    let mut offsets = Vec::with_capacity(locals.len());
    let mut n_free = 0;
    for pins in pinned {
        let f: Vec<usize> = (0..pins.len()).filter(|&j| pins[j].is_none()).collect();
        offsets.push(n_free);
        n_free += f.len();
        free.push(f);
    }
    // Jacobian rows that still touch a free variable.
    let mut j_rows: Vec<(usize, usize)> = Vec::new();
    for (a, loc) in locals.iter().enumerate() {
        for r in 0..loc.jacobian.nrows() {
            if free[a].iter().any(|&j| loc.jacobian[(r, j)] != 0.0) {
                j_rows.push((a, r));
            }
        }
    }
    let n_j = j_rows.len();
    let dim = n_free + n_c + n_j;
    let mut kkt = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);

    for r in 0..n_c {
        kkt[(n_free + r, n_free + r)] = -1.0 / mu;
        rhs[n_free + r] = -ay[r] - lambda[r] / mu;
    }
    for (a, (coupling, loc)) in couplings.iter().zip(locals).enumerate() {
        let off = offsets[a];
        let mut local_pos = vec![usize::MAX; loc.y.len()];
        for (p, &j) in free[a].iter().enumerate() {
            local_pos[j] = off + p;
        }
        for (p, &j) in free[a].iter().enumerate() {
            for (q, &l) in free[a].iter().enumerate() {
                kkt[(off + p, off + q)] = loc.hessian[(j, l)];
            }
            rhs[off + p] = -loc.gradient[j];
            for (l, pin) in pinned[a].iter().enumerate() {
                if let Some(d) = pin {
                    rhs[off + p] -= loc.hessian[(j, l)] * d;
                }
            }
        }
        for &(r, j, c) in *coupling {
            match (local_pos[j], pinned[a][j]) {
                (p, None) => {
                    kkt[(n_free + r, p)] += c;
                    kkt[(p, n_free + r)] += c;
                }
                (_, Some(d)) => rhs[n_free + r] -= c * d,
            }
        }
    }
    for (i, &(a, r)) in j_rows.iter().enumerate() {
        let row = n_free + n_c + i;
        for (p, &j) in free[a].iter().enumerate() {
            let v = locals[a].jacobian[(r, j)];
            kkt[(row, offsets[a] + p)] = v;
            kkt[(offsets[a] + p, row)] = v;
        }
        for (l, pin) in pinned[a].iter().enumerate() {
            if let Some(d) = pin {
                rhs[row] -= locals[a].jacobian[(r, l)] * d;
            }
        }
    }

    let order = reverse_cuthill_mckee(&kkt);
    let permuted = DMatrix::from_fn(dim, dim, |i, j| kkt[(order[i], order[j])]);
    let permuted_rhs = DVector::from_fn(dim, |i, _| rhs[order[i]]);
    let mut factor = SymmetricFactor::factor(&permuted);
    let mut system = permuted;
    let regularized = factor.is_singular();
    if regularized {
        warn!("coordinator KKT matrix is singular; shifting its diagonal by {SINGULAR_SHIFT:e}");
        for i in 0..dim {
            system[(i, i)] += if order[i] < n_free { SINGULAR_SHIFT } else { -SINGULAR_SHIFT };
        }
        factor = SymmetricFactor::factor(&system);
    }
    let sol_perm = factor.solve_refined(&system, &permuted_rhs, 2);
    let kkt_residual = (&system * &sol_perm - &permuted_rhs).amax();
    let mut sol = DVector::zeros(dim);
    for i in 0..dim {
        sol[order[i]] = sol_perm[i];
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Dimension("coordinator QP produced a non-finite step".into()));
    }

    let delta_y = pinned
        .iter()
        .enumerate()
        .map(|(a, pins)| {
            let mut d = DVector::from_iterator(pins.len(), pins.iter().map(|p| p.unwrap_or(0.0)));
            for (p, &j) in free[a].iter().enumerate() {
                d[j] = sol[offsets[a] + p];
            }
            d
        })
        .collect();
    let lambda_qp = sol.rows(n_free, n_c).into_owned();
    Ok(QpResult { delta_y, lambda_qp, kkt_residual, regularized })
}

/// `z ← z + α₁(y − z) + α₂Δy`, `λ ← λ + α₃(λ_QP − λ)`.
pub fn update_iterates(state: &mut AladinState, locals: &[LocalResult], qp: &QpResult, alphas: [f64; 3]) {
    let [a1, a2, a3] = alphas;
    for ((z, loc), dy) in state.z.iter_mut().zip(locals).zip(&qp.delta_y) {
        let step = (&loc.y - &*z) * a1 + dy * a2;
        *z += step;
    }
    let dl = (&qp.lambda_qp - &state.lambda) * a3;
    state.lambda += dl;
}

/// `ρ ← min(r_ρ ρ, ρ̄)`, `μ ← min(r_μ μ, μ̄)`.
pub fn update_penalties(state: &mut AladinState, config: &AladinConfig) {
    state.rho = (state.rho * config.r_rho).min(config.rho_max);
    state.mu = (state.mu * config.r_mu).min(config.mu_max);
}
