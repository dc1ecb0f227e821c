//! Dense symmetric indefinite factorization.
//!
//! `P A Pᵀ = L D Lᵀ` with Bunch–Kaufman partial pivoting (1×1 and 2×2 pivot
//! blocks). The factorization reports the inertia of `A`, which the
//! interior-point solver uses to decide whether its Newton matrix needs a
//! Hessian shift.

use nalgebra::{DMatrix, DVector};

/// Number of positive, negative and zero eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

#[derive(Debug, Clone, Copy)]
enum Pivot {
    One(f64),
    /// Upper-left entry, off-diagonal, lower-right entry.
    Two(f64, f64, f64),
}

#[derive(Debug, Clone)]
pub struct SymmetricFactor {
    n: usize,
    /// Column-major unit lower-triangular factor (diagonal implicit).
    l: Vec<f64>,
    /// Pivot blocks keyed by their leading index.
    pivots: Vec<(usize, Pivot)>,
    /// `perm[i]` is the original row that ended up in position `i`.
    perm: Vec<usize>,
    inertia: Inertia,
}

const BK_ALPHA: f64 = 0.640_388_203_202_208; // (1 + sqrt(17)) / 8

impl SymmetricFactor {
    /// Factor a symmetric matrix; only the lower triangle is read.
    ///
    /// Pivots whose magnitude falls below `zero_tol` times the largest entry
    /// in the pivot's original row are counted as zero eigenvalues and the
    /// factor is flagged as singular.
    pub fn factor(a: &DMatrix<f64>) -> Self {
        Self::factor_with_tol(a, 1e-14)
    }

    pub fn factor_with_tol(a: &DMatrix<f64>, zero_tol: f64) -> Self {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "matrix must be square");
        let mut w = vec![0.0; n * n];
        let mut row_scale = vec![f64::MIN_POSITIVE; n];
        for j in 0..n {
            for i in j..n {
                let v = a[(i, j)];
                w[i + j * n] = v;
                row_scale[i] = row_scale[i].max(v.abs());
                row_scale[j] = row_scale[j].max(v.abs());
            }
        }
        let idx = |i: usize, j: usize| i + j * n;
        let mut perm: Vec<usize> = (0..n).collect();
        let mut pivots = Vec::with_capacity(n);
        let mut inertia = Inertia::default();

        let mut k = 0;
        while k < n {
            let absakk = w[idx(k, k)].abs();
            let (imax, colmax) = if k + 1 < n {
                let mut best = (k + 1, 0.0);
                for i in k + 1..n {
                    let v = w[idx(i, k)].abs();
                    if v > best.1 {
                        best = (i, v);
                    }
                }
                best
            } else {
                (k, 0.0)
            };

            let mut kstep = 1;
            let mut kp = k;
            if absakk.max(colmax) > zero_tol * row_scale[perm[k]] && absakk < BK_ALPHA * colmax {
                let mut rowmax: f64 = 0.0;
                for j in k..imax {
                    rowmax = rowmax.max(w[idx(imax, j)].abs());
                }
                for i in imax + 1..n {
                    rowmax = rowmax.max(w[idx(i, imax)].abs());
                }
                if absakk >= BK_ALPHA * colmax * (colmax / rowmax) {
                    kp = k;
                } else if w[idx(imax, imax)].abs() >= BK_ALPHA * rowmax {
                    kp = imax;
                } else {
                    kp = imax;
                    kstep = 2;
                }
            }

            let kk = k + kstep - 1;
            if kp != kk {
                swap_symmetric(&mut w, n, kk, kp);
                perm.swap(kk, kp);
            }

            if kstep == 1 {
                let d = w[idx(k, k)];
                if d.abs() <= zero_tol * row_scale[perm[k]] {
                    inertia.zero += 1;
                    pivots.push((k, Pivot::One(0.0)));
                    for i in k + 1..n {
                        w[idx(i, k)] = 0.0;
                    }
                } else {
                    if d > 0.0 {
                        inertia.positive += 1;
                    } else {
                        inertia.negative += 1;
                    }
                    pivots.push((k, Pivot::One(d)));
                    let inv = 1.0 / d;
                    let end = last_nonzero(&w[k * n..k * n + n], k) + 1;
                    for j in k + 1..end {
                        let ajk = w[idx(j, k)];
                        if ajk == 0.0 {
                            continue;
                        }
                        let f = ajk * inv;
                        let (head, tail) = w.split_at_mut(j * n);
                        let colk = &head[k * n..k * n + n];
                        let colj = &mut tail[..n];
                        for i in j..end {
                            colj[i] -= f * colk[i];
                        }
                    }
                    for i in k + 1..end {
                        w[idx(i, k)] *= inv;
                    }
                }
            } else {
                let d11 = w[idx(k, k)];
                let d21 = w[idx(k + 1, k)];
                let d22 = w[idx(k + 1, k + 1)];
                let det = d11 * d22 - d21 * d21;
                let tr = d11 + d22;
                let local = zero_tol * row_scale[perm[k]].max(row_scale[perm[k + 1]]);
                if det.abs() <= local * local {
                    inertia.zero += 1;
                    if tr > 0.0 {
                        inertia.positive += 1;
                    } else {
                        inertia.negative += 1;
                    }
                } else if det < 0.0 {
                    inertia.positive += 1;
                    inertia.negative += 1;
                } else if tr > 0.0 {
                    inertia.positive += 2;
                } else {
                    inertia.negative += 2;
                }
                pivots.push((k, Pivot::Two(d11, d21, d22)));
                let (i11, i21, i22) = (d22 / det, -d21 / det, d11 / det);
                // Trailing update with the original columns, then scale to L.
                let end = last_nonzero(&w[k * n..k * n + n], k + 1)
                    .max(last_nonzero(&w[(k + 1) * n..(k + 1) * n + n], k + 1))
                    + 1;
                for j in k + 2..end {
                    let wj1 = w[idx(j, k)];
                    let wj2 = w[idx(j, k + 1)];
                    let lj1 = wj1 * i11 + wj2 * i21;
                    let lj2 = wj1 * i21 + wj2 * i22;
                    if lj1 == 0.0 && lj2 == 0.0 {
                        continue;
                    }
                    let (head, tail) = w.split_at_mut(j * n);
                    let colk = &head[k * n..k * n + n];
                    let colk1 = &head[(k + 1) * n..(k + 1) * n + n];
                    let colj = &mut tail[..n];
                    for i in j..end {
                        colj[i] -= colk[i] * lj1 + colk1[i] * lj2;
                    }
                }
                for i in k + 2..end {
                    let wi1 = w[idx(i, k)];
                    let wi2 = w[idx(i, k + 1)];
                    w[idx(i, k)] = wi1 * i11 + wi2 * i21;
                    w[idx(i, k + 1)] = wi1 * i21 + wi2 * i22;
                }
                w[idx(k + 1, k)] = 0.0;
            }
            k += kstep;
        }

        Self {
            n,
            l: w,
            pivots,
            perm,
            inertia,
        }
    }

    pub fn inertia(&self) -> Inertia {
        self.inertia
    }

    pub fn is_singular(&self) -> bool {
        self.inertia.zero > 0
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solve `A x = b`. Zero pivots contribute a zero component.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();

        // Forward: L y = P b.
        for j in 0..n {
            let xj = x[j];
            if xj != 0.0 {
                let col = &self.l[j * n..j * n + n];
                for i in j + 1..n {
                    x[i] -= col[i] * xj;
                }
            }
        }
        // Block diagonal.
        for &(k, piv) in &self.pivots {
            match piv {
                Pivot::One(d) => {
                    x[k] = if d == 0.0 { 0.0 } else { x[k] / d };
                }
                Pivot::Two(d11, d21, d22) => {
                    let det = d11 * d22 - d21 * d21;
                    let (b1, b2) = (x[k], x[k + 1]);
                    x[k] = (d22 * b1 - d21 * b2) / det;
                    x[k + 1] = (d11 * b2 - d21 * b1) / det;
                }
            }
        }
        // Backward: Lᵀ z = y.
        for j in (0..n).rev() {
            let col = &self.l[j * n..j * n + n];
            let mut s = x[j];
            for i in j + 1..n {
                s -= col[i] * x[i];
            }
            x[j] = s;
        }
        let mut out = DVector::zeros(n);
        for (i, &p) in self.perm.iter().enumerate() {
            out[p] = x[i];
        }
        out
    }

    /// Solve with a few rounds of iterative refinement against `a`.
    pub fn solve_refined(&self, a: &DMatrix<f64>, b: &DVector<f64>, rounds: usize) -> DVector<f64> {
        let mut x = self.solve(b);
        for _ in 0..rounds {
            let r = b - symmetric_mul(a, &x);
            if r.amax() <= f64::EPSILON * b.amax() {
                break;
            }
            x += self.solve(&r);
        }
        x
    }
}

/// Index of the last nonzero entry of `col` at or after `from` (or `from`).
fn last_nonzero(col: &[f64], from: usize) -> usize {
    (from..col.len()).rev().find(|&i| col[i] != 0.0).unwrap_or(from)
}

/// Reverse Cuthill–McKee ordering of the nonzero pattern of a symmetric
/// matrix. `order[i]` is the original index placed at position `i`.
pub fn reverse_cuthill_mckee(a: &DMatrix<f64>) -> Vec<usize> {
    let n = a.nrows();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && (a[(i, j)] != 0.0 || a[(j, i)] != 0.0)).collect())
        .collect();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let start = (0..n).filter(|&i| !seen[i]).min_by_key(|&i| (adj[i].len(), i)).unwrap();
        seen[start] = true;
        let mut head = order.len();
        order.push(start);
        while head < order.len() {
            let v = order[head];
            head += 1;
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&u| !seen[u]).collect();
            next.sort_by_key(|&u| (adj[u].len(), u));
            for u in next {
                seen[u] = true;
                order.push(u);
            }
        }
    }
    order.reverse();
    order
}

/// `A x` reading only the lower triangle of `A`.
pub fn symmetric_mul(a: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let n = a.nrows();
    let mut y = DVector::zeros(n);
    for j in 0..n {
        let xj = x[j];
        y[j] += a[(j, j)] * xj;
        for i in j + 1..n {
            let aij = a[(i, j)];
            y[i] += aij * xj;
            y[j] += aij * x[i];
        }
    }
    y
}

/// Symmetric row/column interchange of `p < q` on lower-triangular storage,
/// including the already-computed columns of `L` to the left.
fn swap_symmetric(w: &mut [f64], n: usize, p: usize, q: usize) {
    debug_assert!(p < q);
    let idx = |i: usize, j: usize| i + j * n;
    for j in 0..p {
        w.swap(idx(p, j), idx(q, j));
    }
    w.swap(idx(p, p), idx(q, q));
    for i in p + 1..q {
        w.swap(idx(i, p), idx(q, i));
    }
    for i in q + 1..n {
        w.swap(idx(i, p), idx(i, q));
    }
}

/// Replace every eigenvalue below `floor` by `floor`.
///
/// The matrix is decomposed per connected block of its sparsity pattern;
/// the result is identical to flooring the full eigendecomposition.
pub fn floor_eigenvalues(h: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let n = h.nrows();
    let mut out = DMatrix::zeros(n, n);
    for block in connected_blocks(h) {
        let m = block.len();
        let sub = DMatrix::from_fn(m, m, |i, j| 0.5 * (h[(block[i], block[j])] + h[(block[j], block[i])]));
        let eig = nalgebra::SymmetricEigen::new(sub);
        let vals = eig.eigenvalues.map(|v| v.max(floor));
        let rec = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
        for i in 0..m {
            for j in 0..m {
                out[(block[i], block[j])] = 0.5 * (rec[(i, j)] + rec[(j, i)]);
            }
        }
    }
    out
}

/// Index sets of the connected components of the nonzero pattern of `h`.
pub fn connected_blocks(h: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = h.nrows();
    let mut seen = vec![false; n];
    let mut blocks = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let mut block = Vec::new();
        while let Some(i) = stack.pop() {
            block.push(i);
            for j in 0..n {
                if !seen[j] && (h[(i, j)] != 0.0 || h[(j, i)] != 0.0) {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        block.sort_unstable();
        blocks.push(block);
    }
    blocks
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sym(n: usize, f: impl Fn(usize, usize) -> f64) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = f(i, j);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        a
    }

    #[test]
    fn saddle_point_inertia() {
        // [[2, 1], [1, 0]] has one positive and one negative eigenvalue.
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 0.0]);
        let f = SymmetricFactor::factor(&a);
        assert_eq!(f.inertia(), Inertia { positive: 1, negative: 1, zero: 0 });
        let x = f.solve(&DVector::from_vec(vec![3.0, 1.0]));
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_diagonal_forces_two_by_two_pivot() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 2.0, 0.0, 2.0, 0.0]);
        let f = SymmetricFactor::factor(&a);
        let eig = a.clone().symmetric_eigenvalues();
        let pos = eig.iter().filter(|v| **v > 1e-12).count();
        let neg = eig.iter().filter(|v| **v < -1e-12).count();
        assert_eq!(f.inertia().positive, pos);
        assert_eq!(f.inertia().negative, neg);
        assert_eq!(f.inertia().zero, 1);
    }

    #[test]
    fn singular_matrix_is_flagged() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(SymmetricFactor::factor(&a).is_singular());
    }

    #[test]
    fn flooring_keeps_positive_part() {
        let h = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 5.0]);
        let f = floor_eigenvalues(&h, 1e-8);
        let eig = f.symmetric_eigenvalues();
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((min - 1e-8).abs() < 1e-12);
        assert!((f[(2, 2)] - 5.0).abs() < 1e-14);
        assert_eq!(connected_blocks(&h).len(), 2);
    }

    proptest! {
        #[test]
        fn solves_random_indefinite_systems(seed in 0u64..10_000, n in 1usize..24) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let vals: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = sym(n, |i, j| vals[i * n + j] + if i == j { 0.1 * (i as f64 - n as f64 / 2.0) } else { 0.0 });
            let b = DVector::from_fn(n, |i, _| (i as f64 + 1.0).sin());
            let f = SymmetricFactor::factor(&a);
            prop_assume!(!f.is_singular());
            let x = f.solve_refined(&a, &b, 2);
            let r = &a * &x - &b;
            prop_assert!(r.amax() <= 1e-9 * (1.0 + x.amax()));
            let eig = a.clone().symmetric_eigenvalues();
            let neg = eig.iter().filter(|v| **v < 0.0).count();
            prop_assert_eq!(f.inertia().negative, neg);
        }
    }
}
