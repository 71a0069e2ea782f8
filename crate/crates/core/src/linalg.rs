//! Small dense linear-algebra helpers shared by the factorizers.

use nalgebra::{Cholesky, DMatrix, DVector};

/// Singular values below this multiple of the largest count as zero.
pub const RANK_TOL: f64 = 1e-12;

/// Ridge added to singular normal equations, as a multiple of their trace.
pub const RIDGE_FACTOR: f64 = 1e-10;

/// Solution of a symmetric positive semidefinite system.
#[derive(Debug, Clone)]
pub struct SpdSolve {
    pub x: DVector<f64>,
    pub regularized: bool,
}

/// Solves `A x = b` for symmetric PSD `A`, falling back to `A + λI` with
/// `λ = 1e-10·tr(A)` when `A` is numerically singular.
pub fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>) -> SpdSolve {
    let dim = a.nrows();
    let max_diag = (0..dim).map(|i| a[(i, i)]).fold(0.0, f64::max);
    if max_diag > 0.0 {
        if let Some(chol) = Cholesky::new(a.clone()) {
            let l = chol.l_dirty();
            let min_pivot = (0..dim).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
            if min_pivot > RANK_TOL * max_diag {
                return SpdSolve {
                    x: chol.solve(b),
                    regularized: false,
                };
            }
        }
    }
    let trace = a.trace();
    let lambda = if trace > 0.0 { RIDGE_FACTOR * trace } else { RIDGE_FACTOR };
    let mut reg = a;
    for i in 0..dim {
        reg[(i, i)] += lambda;
    }
    let x = match Cholesky::new(reg.clone()) {
        Some(chol) => chol.solve(b),
        None => pseudo_inverse(&reg) * b,
    };
    SpdSolve { x, regularized: true }
}

/// Thin SVD with singular values sorted in decreasing order.
///
/// Computed with faer: nalgebra's bidiagonal SVD can return a wrong `U` for
/// exactly rank-deficient inputs.
pub fn sorted_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (r, c) = m.shape();
    let d = r.min(c);
    if d == 0 {
        return (DMatrix::zeros(r, 0), DVector::zeros(0), DMatrix::zeros(c, 0));
    }
    let fm = faer::Mat::<f64>::from_fn(r, c, |i, j| m[(i, j)]);
    let svd = fm.thin_svd().expect("SVD of a finite matrix");
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let us = DMatrix::from_fn(r, d, |i, j| u[(i, order[j])]);
    let ss = DVector::from_fn(d, |i, _| s[order[i]]);
    let vs = DMatrix::from_fn(c, d, |i, j| v[(i, order[j])]);
    (us, ss, vs)
}

/// Moore–Penrose pseudo-inverse, dropping singular values below `RANK_TOL` of the largest.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (u, s, v) = sorted_svd(m);
    let max = s.iter().cloned().fold(0.0, f64::max);
    let inv = DVector::from_fn(s.len(), |i, _| if max > 0.0 && s[i] > RANK_TOL * max { 1.0 / s[i] } else { 0.0 });
    v * DMatrix::from_diagonal(&inv) * u.transpose()
}

/// Top `k` right singular vectors of `m` as a `p × k` matrix.
pub fn top_right_singular_vectors(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let (_, _, v) = sorted_svd(m);
    let mut out = DMatrix::zeros(m.ncols(), k);
    let avail = k.min(v.ncols());
    out.columns_mut(0, avail).copy_from(&v.columns(0, avail));
    out
}

/// Numerical rank of `m` under the relative singular-value threshold.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let s = m.clone().singular_values();
    let max = s.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > RANK_TOL * max).count()
}

/// Orthonormal basis of the column span of `m`.
pub fn orthonormal_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.ncols() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let (u, s, _) = sorted_svd(m);
    let max = s.iter().cloned().fold(0.0, f64::max);
    let rank = if max == 0.0 {
        0
    } else {
        s.iter().filter(|&&v| v > RANK_TOL * max).count()
    };
    u.columns(0, rank).into_owned()
}

/// `(I − QQᵀ) m` for a matrix `q` with orthonormal columns.
pub fn project_out(m: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    if q.ncols() == 0 {
        return m.clone();
    }
    m - q * (q.transpose() * m)
}

/// Modified Gram–Schmidt of `v` against the orthonormal columns of `q`, twice, then normalized.
/// Returns `None` when nothing of `v` survives.
pub fn orthonormalize_against(v: &DVector<f64>, q: &DMatrix<f64>) -> Option<DVector<f64>> {
    let scale = v.norm();
    if scale == 0.0 {
        return None;
    }
    let mut w = v.clone();
    for _ in 0..2 {
        for c in q.column_iter() {
            let d = c.dot(&w);
            w.axpy(-d, &c, 1.0);
        }
    }
    let n = w.norm();
    if n <= 1e-10 * scale {
        None
    } else {
        Some(w / n)
    }
}

pub(crate) fn check_finite_matrix(m: &DMatrix<f64>) -> crate::error::Result<()> {
    match m.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(crate::error::Error::NonFinite { index, value: m[index] }),
        None => Ok(()),
    }
}

/// Column means of `m`.
pub fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_fn(m.ncols(), |j, _| m.column(j).sum() / n)
}

/// `m − 1 cᵀ`.
pub fn subtract_row(m: &DMatrix<f64>, c: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        row -= c.transpose();
    }
    out
}

/// Flips `v` so that its entry of largest magnitude is positive; returns whether it was flipped.
pub fn orient_largest_positive(v: &mut DVector<f64>) -> bool {
    let idx = v.iamax();
    if v[idx] < 0.0 {
        v.neg_mut();
        true
    } else {
        false
    }
}
