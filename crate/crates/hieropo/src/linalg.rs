//! Small dense linear-algebra helpers shared across modules.
//!
//! All covariance work goes through SPD Cholesky factorizations; explicit
//! inverses only appear where a formula multiplies by one. Eigenvalues come
//! from `SymmetricEigen`, so inputs are symmetrized first.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Replace `m` with its symmetric part `(m + m^T) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Largest absolute entry of `m - m^T`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Cholesky-factor an SPD matrix, naming it in the error on failure.
pub fn spd_cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::NotPositiveDefinite {
        what: what.to_string(),
    })
}

/// Inverse of an SPD matrix via Cholesky, symmetrized.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let mut inv = spd_cholesky(m, what)?.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// Validate that `m` is square of size `d`, symmetric within `sym_tol`, and
/// positive definite (Cholesky succeeds).
pub fn check_spd(m: &DMatrix<f64>, d: usize, sym_tol: f64, what: &str) -> Result<()> {
    if m.nrows() != d || m.ncols() != d {
        return Err(Error::DimensionMismatch {
            what: what.to_string(),
            expected: d,
            actual: m.nrows().max(m.ncols()),
        });
    }
    let asym = asymmetry(m);
    if asym > sym_tol {
        return Err(Error::NotSymmetric {
            what: what.to_string(),
            asymmetry: asym,
        });
    }
    spd_cholesky(m, what).map(|_| ())
}

/// Full eigendecomposition of the symmetric part of `m`.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, Dyn> {
    let mut s = m.clone();
    symmetrize(&mut s);
    SymmetricEigen::new(s)
}

/// Eigenvalues of the symmetric part of `m`, unsorted.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let mut s = m.clone();
    symmetrize(&mut s);
    s.symmetric_eigenvalues()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m).min()
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m).max()
}

/// Whether `m` (symmetric) is PSD up to `-tol` on the smallest eigenvalue.
pub fn is_psd_within(m: &DMatrix<f64>, tol: f64) -> bool {
    min_eigenvalue(m) >= -tol
}

/// Whether `a <= b` in the PSD order, within `tol`.
pub fn psd_leq(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    is_psd_within(&(b - a), tol)
}

/// Quadratic form `v^T m v`.
pub fn quad_form(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (v.transpose() * m * v)[(0, 0)]
}
