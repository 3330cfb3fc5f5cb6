//! Small dense linear-algebra helpers shared by the model code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Condition numbers above this trigger a warning on the owning report.
pub const COND_WARN: f64 = 1e12;

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order. Columns of the returned matrix are the eigenvectors.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues_asc(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut v: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues_asc(m).first().copied().unwrap_or(f64::INFINITY)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}

/// Largest element-wise difference relative to the larger of the two
/// max-norms (floored at 1).
pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    max_abs_diff(a, b) / max_abs(a).max(max_abs(b)).max(1.0)
}

/// Cholesky factorization that also rejects numerically singular matrices:
/// a condition estimate beyond `1/(n·ε)` means the factorization only
/// succeeded through rounding.
pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NotPositiveDefinite(format!("{what} has non-finite entries")));
    }
    let ch = Cholesky::new(symmetrize(m))
        .ok_or_else(|| Error::NotPositiveDefinite(format!("Cholesky of {what} failed")))?;
    let limit = 1.0 / (m.nrows().max(1) as f64 * f64::EPSILON);
    if chol_condition_estimate(&ch) > limit {
        return Err(Error::NotPositiveDefinite(format!("{what} is numerically singular")));
    }
    Ok(ch)
}

/// Cheap condition estimate from the Cholesky diagonal. It is a lower bound
/// on the true 2-norm condition number, good enough for flagging.
pub fn chol_condition_estimate(ch: &Cholesky<f64, Dyn>) -> f64 {
    let l = ch.l_dirty();
    let n = l.nrows();
    if n == 0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for i in 0..n {
        let d = l[(i, i)].abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (hi / lo).powi(2)
}

/// Inverse of a symmetric positive definite matrix via Cholesky. Returns the
/// inverse and a condition-number estimate.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, f64)> {
    let ch = cholesky(m, what)?;
    let cond = chol_condition_estimate(&ch);
    Ok((symmetrize(&ch.inverse()), cond))
}

pub fn is_pd(m: &DMatrix<f64>) -> bool {
    cholesky(m, "matrix").is_ok()
}

/// Assembles `[[a, b], [c, d]]` from four n×n blocks.
pub fn block2(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = a.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    out.view_mut((0, 0), (n, n)).copy_from(a);
    out.view_mut((0, n), (n, n)).copy_from(b);
    out.view_mut((n, 0), (n, n)).copy_from(c);
    out.view_mut((n, n), (n, n)).copy_from(d);
    out
}

/// Splits a 2n×2n matrix into its four n×n blocks.
pub fn split2(m: &DMatrix<f64>) -> [DMatrix<f64>; 4] {
    let n = m.nrows() / 2;
    [
        m.view((0, 0), (n, n)).into_owned(),
        m.view((0, n), (n, n)).into_owned(),
        m.view((n, 0), (n, n)).into_owned(),
        m.view((n, n), (n, n)).into_owned(),
    ]
}

/// `V diag(d) Vᵀ`.
pub fn from_spectral(v: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    let mut scaled = v.clone();
    for (j, dj) in d.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*dj);
    }
    symmetrize(&(scaled * v.transpose()))
}

/// `diag(l) M diag(r)`.
pub fn diag_scale(l: &[f64], m: &DMatrix<f64>, r: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| l[i] * m[(i, j)] * r[j])
}
