//! Complex power injections `S = diag(V)·conj(Y·V)` in polar coordinates,
//! with analytic first and second derivatives.
//!
//! Derivative matrices are ordered `[|V|; ∠V]` along columns and `[P; Q]`
//! along rows, so both are `2n × 2n`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::Complex64;

#[derive(Debug, Clone, PartialEq)]
pub struct VoltageState {
    pub magnitude: DVector<f64>,
    pub angle: DVector<f64>,
}

impl VoltageState {
    pub fn flat(n: usize) -> Self {
        Self { magnitude: DVector::from_element(n, 1.0), angle: DVector::zeros(n) }
    }

    pub fn len(&self) -> usize {
        self.magnitude.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitude.is_empty()
    }

    pub fn phasors(&self) -> DVector<Complex64> {
        DVector::from_fn(self.len(), |i, _| Complex64::from_polar(self.magnitude[i], self.angle[i]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectionResult {
    pub p_inj: DVector<f64>,
    pub q_inj: DVector<f64>,
}

fn check(v: &VoltageState, y: &DMatrix<Complex64>) -> Result<usize> {
    let n = v.magnitude.len();
    if v.angle.len() != n || y.nrows() != n || y.ncols() != n {
        return Err(Error::Dimension(format!(
            "voltage state has {}/{} entries, admittance is {}x{}",
            n,
            v.angle.len(),
            y.nrows(),
            y.ncols()
        )));
    }
    Ok(n)
}

/// Off-diagonal entries of `Y` that are nonzero, as `(i, j, G, B)`.
fn off_diagonal(y: &DMatrix<Complex64>) -> impl Iterator<Item = (usize, usize, f64, f64)> + '_ {
    let n = y.nrows();
    (0..n).flat_map(move |j| {
        (0..n).filter_map(move |i| {
            let yij = y[(i, j)];
            (i != j && (yij.re != 0.0 || yij.im != 0.0)).then_some((i, j, yij.re, yij.im))
        })
    })
}

pub fn injections(v: &VoltageState, y: &DMatrix<Complex64>) -> Result<InjectionResult> {
    let n = check(v, y)?;
    let (vm, va) = (&v.magnitude, &v.angle);
    let mut p = DVector::zeros(n);
    let mut q = DVector::zeros(n);
    for i in 0..n {
        let yii = y[(i, i)];
        p[i] += vm[i] * vm[i] * yii.re;
        q[i] -= vm[i] * vm[i] * yii.im;
    }
    for (i, j, g, b) in off_diagonal(y) {
        let (s, c) = (va[i] - va[j]).sin_cos();
        let vv = vm[i] * vm[j];
        p[i] += vv * (g * c + b * s);
        q[i] += vv * (g * s - b * c);
    }
    Ok(InjectionResult { p_inj: p, q_inj: q })
}

pub fn injection_jacobian(v: &VoltageState, y: &DMatrix<Complex64>) -> Result<DMatrix<f64>> {
    let n = check(v, y)?;
    let (vm, va) = (&v.magnitude, &v.angle);
    let mut jac = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        let yii = y[(i, i)];
        jac[(i, i)] += 2.0 * vm[i] * yii.re;
        jac[(n + i, i)] -= 2.0 * vm[i] * yii.im;
    }
    for (i, j, g, b) in off_diagonal(y) {
        let (s, c) = (va[i] - va[j]).sin_cos();
        let a = g * c + b * s;
        let bb = g * s - b * c;
        let vv = vm[i] * vm[j];
        // P_i
        jac[(i, i)] += vm[j] * a;
        jac[(i, j)] += vm[i] * a;
        jac[(i, n + i)] -= vv * bb;
        jac[(i, n + j)] += vv * bb;
        // Q_i
        jac[(n + i, i)] += vm[j] * bb;
        jac[(n + i, j)] += vm[i] * bb;
        jac[(n + i, n + i)] += vv * a;
        jac[(n + i, n + j)] -= vv * a;
    }
    Ok(jac)
}

/// `Σ_b mult_p[b]·∇²P_b + mult_q[b]·∇²Q_b`.
pub fn injection_hessian_contraction(
    v: &VoltageState,
    y: &DMatrix<Complex64>,
    mult_p: &DVector<f64>,
    mult_q: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = check(v, y)?;
    if mult_p.len() != n || mult_q.len() != n {
        return Err(Error::Dimension(format!(
            "multipliers have {}/{} entries for {n} buses",
            mult_p.len(),
            mult_q.len()
        )));
    }
    let (vm, va) = (&v.magnitude, &v.angle);
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        let yii = y[(i, i)];
        h[(i, i)] += 2.0 * (mult_p[i] * yii.re - mult_q[i] * yii.im);
    }
    for (i, j, g, b) in off_diagonal(y) {
        let (wp, wq) = (mult_p[i], mult_q[i]);
        if wp == 0.0 && wq == 0.0 {
            continue;
        }
        let (s, cs) = (va[i] - va[j]).sin_cos();
        let a = g * cs + b * s;
        let bb = g * s - b * cs;
        let c = wp * a + wq * bb;
        let c1 = -wp * bb + wq * a;
        let vv = vm[i] * vm[j];
        let (vi, vj, ti, tj) = (i, j, n + i, n + j);
        let mut add = |r: usize, col: usize, val: f64| {
            h[(r, col)] += val;
            h[(col, r)] += val;
        };
        add(vi, vj, c);
        add(vi, ti, vm[j] * c1);
        add(vi, tj, -vm[j] * c1);
        add(vj, ti, vm[i] * c1);
        add(vj, tj, -vm[i] * c1);
        add(ti, tj, vv * c);
        // Diagonal angle terms (c'' = -c), entered once each.
        h[(ti, ti)] -= vv * c;
        h[(tj, tj)] -= vv * c;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_admittance, Branch, Bus, Network};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_bus() -> DMatrix<Complex64> {
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(0.01, 0.1);
        DMatrix::from_row_slice(2, 2, &[ys, -ys, -ys, ys])
    }

    fn feeder(with_shunts: bool) -> DMatrix<Complex64> {
        let mut buses: Vec<Bus> = (0..13).map(|i| Bus::new(i, 0.9, 1.1, 0.0, 0.0)).collect();
        buses[0].is_reference = true;
        let parents = [0, 1, 2, 3, 4, 5, 6, 7, 6, 9, 10, 11];
        let branches = parents
            .iter()
            .enumerate()
            .map(|(k, &p)| Branch {
                from_bus: p,
                to_bus: k + 1,
                resistance: 0.02 + 0.003 * k as f64,
                reactance: 0.04 + 0.002 * k as f64,
                shunt_susceptance: if with_shunts { 0.001 * (k + 1) as f64 } else { 0.0 },
            })
            .collect();
        build_admittance(&Network { base_mva: 10.0, buses, branches }).unwrap()
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize) -> VoltageState {
        VoltageState {
            magnitude: DVector::from_fn(n, |_, _| rng.random_range(0.9..1.1)),
            angle: DVector::from_fn(n, |_, _| rng.random_range(-0.2..0.2)),
        }
    }

    fn stacked(v: &VoltageState, y: &DMatrix<Complex64>) -> DVector<f64> {
        let r = injections(v, y).unwrap();
        let n = v.len();
        DVector::from_fn(2 * n, |i, _| if i < n { r.p_inj[i] } else { r.q_inj[i - n] })
    }

    fn perturb(v: &VoltageState, k: usize, h: f64) -> VoltageState {
        let n = v.len();
        let mut out = v.clone();
        if k < n {
            out.magnitude[k] += h;
        } else {
            out.angle[k - n] += h;
        }
        out
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (1.0f64).max(a.abs()).max(b.abs())
    }

    #[test]
    fn flat_voltage_has_no_injection() {
        let r = injections(&VoltageState::flat(2), &two_bus()).unwrap();
        assert!(r.p_inj.amax() < 1e-15 && r.q_inj.amax() < 1e-15);
    }

    #[test]
    fn two_bus_matches_complex_arithmetic() {
        let v = VoltageState {
            magnitude: DVector::from_vec(vec![1.0, 0.95]),
            angle: DVector::from_vec(vec![0.0, (-2.0f64).to_radians()]),
        };
        let r = injections(&v, &two_bus()).unwrap();
        // Independent complex-arithmetic evaluation of V·conj(Y·V).
        let expected_p = [0.378_340_527_728_334_93, -0.374_719_311_229_604_06];
        let expected_q = [0.467_953_090_545_757_2, -0.431_740_925_558_449_06];
        for i in 0..2 {
            assert!((r.p_inj[i] - expected_p[i]).abs() < 1e-12);
            assert!((r.q_inj[i] - expected_q[i]).abs() < 1e-12);
        }
        assert!(r.p_inj.sum() > 0.0);
    }

    #[test]
    fn equivalent_formulation_and_rotation_invariance() {
        let y = feeder(true);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let v = random_state(&mut rng, 13);
            let r = injections(&v, &y).unwrap();
            let ph = v.phasors();
            let alt = (ph.map(|c| c.conj()).component_mul(&(&y * &ph))).map(|c| c.conj());
            for i in 0..13 {
                assert!((r.p_inj[i] - alt[i].re).abs() < 1e-12);
                assert!((r.q_inj[i] - alt[i].im).abs() < 1e-12);
            }
            let mut shifted = v.clone();
            shifted.angle.add_scalar_mut(0.37);
            let rs = injections(&shifted, &y).unwrap();
            assert!((&rs.p_inj - &r.p_inj).amax() < 1e-10);
            assert!((&rs.q_inj - &r.q_inj).amax() < 1e-10);
            // Losses are non-negative on a resistive network.
            assert!(injections(&v, &feeder(false)).unwrap().p_inj.sum() >= 0.0);
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let y = feeder(true);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for _ in 0..20 {
            let v = random_state(&mut rng, 13);
            let jac = injection_jacobian(&v, &y).unwrap();
            for k in 0..26 {
                let fd = (stacked(&perturb(&v, k, h), &y) - stacked(&perturb(&v, k, -h), &y)) / (2.0 * h);
                for r in 0..26 {
                    assert!(rel_err(jac[(r, k)], fd[r]) <= 1e-6, "({r},{k}) {} vs {}", jac[(r, k)], fd[r]);
                }
            }
        }
    }

    #[test]
    fn jacobian_without_branches_is_block_diagonal_per_bus() {
        let mut y = DMatrix::from_element(3, 3, Complex64::new(0.0, 0.0));
        for i in 0..3 {
            y[(i, i)] = Complex64::new(0.1, 0.2 * i as f64);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let jac = injection_jacobian(&random_state(&mut rng, 3), &y).unwrap();
        for r in 0..6 {
            for c in 0..6 {
                if r % 3 != c % 3 {
                    assert_eq!(jac[(r, c)], 0.0);
                }
            }
        }
    }

    #[test]
    fn cross_angle_sensitivities_on_a_lossless_line() {
        let ys = Complex64::new(0.0, -10.0);
        let y = DMatrix::from_row_slice(2, 2, &[ys, -ys, -ys, ys]);
        let v = VoltageState::flat(2);
        let jac = injection_jacobian(&v, &y).unwrap();
        // dP_1/dθ_0 equals dP_0/dθ_1 and is the negated self-sensitivity dP_0/dθ_0.
        assert!((jac[(1, 2)] - jac[(0, 3)]).abs() < 1e-12);
        assert!((jac[(1, 2)] + jac[(0, 2)]).abs() < 1e-12);
        let h = 1e-6;
        let fd = (stacked(&perturb(&v, 2, h), &y)[1] - stacked(&perturb(&v, 2, -h), &y)[1]) / (2.0 * h);
        assert!((fd - (-10.0)).abs() < 1e-6);
        assert!((jac[(1, 2)] - fd).abs() < 1e-6);
    }

    #[test]
    fn hessian_contraction_matches_differences_of_the_jacobian() {
        let y = feeder(true);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let h = 1e-6;
        for _ in 0..20 {
            let v = random_state(&mut rng, 13);
            let mp = DVector::from_fn(13, |_, _| rng.random_range(-2.0..2.0));
            let mq = DVector::from_fn(13, |_, _| rng.random_range(-2.0..2.0));
            let hess = injection_hessian_contraction(&v, &y, &mp, &mq).unwrap();
            let mult = DVector::from_fn(26, |i, _| if i < 13 { mp[i] } else { mq[i - 13] });
            assert!((&hess - hess.transpose()).amax() <= 1e-12);
            for k in 0..26 {
                let jp = injection_jacobian(&perturb(&v, k, h), &y).unwrap();
                let jm = injection_jacobian(&perturb(&v, k, -h), &y).unwrap();
                let fd = (jp - jm).transpose() * &mult / (2.0 * h);
                for r in 0..26 {
                    assert!(rel_err(hess[(r, k)], fd[r]) <= 1e-5, "({r},{k}) {} vs {}", hess[(r, k)], fd[r]);
                }
            }
        }
    }

    #[test]
    fn zero_multipliers_give_zero_hessian() {
        let v = VoltageState::flat(13);
        let z = DVector::zeros(13);
        assert_eq!(injection_hessian_contraction(&v, &feeder(true), &z, &z).unwrap().amax(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        assert!(injections(&VoltageState::flat(3), &two_bus()).is_err());
        let z = DVector::zeros(3);
        assert!(injection_hessian_contraction(&VoltageState::flat(2), &two_bus(), &z, &z).is_err());
    }
}
