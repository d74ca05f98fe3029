//! Low-rank matrix factorization by alternating least squares.
//!
//! Minimizes `sum_(i,j) (r_ij - u_i^T v_j)^2 + lambda (||U||_F^2 + ||V||_F^2)`
//! by exact ridge solves: fixing V, each user row u_i has a closed-form
//! minimizer, and symmetrically for items. Because every half-sweep is an
//! exact coordinate minimization, the objective can never increase.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{self, purpose};

use super::RatingsMatrix;

/// Result of an ALS run, with traces for monotonicity checks.
#[derive(Debug, Clone)]
pub struct Factorization {
    /// User factors, one row per user.
    pub u: DMatrix<f64>,
    /// Item factors, one row per item.
    pub v: DMatrix<f64>,
    pub rank: usize,
    pub lambda_reg: f64,
    /// Training RMSE after initialization and after each sweep.
    pub rmse_trace: Vec<f64>,
    /// Regularized objective after initialization and after each half-sweep.
    pub objective_trace: Vec<f64>,
}

impl Factorization {
    /// Root mean squared residual over the observed entries.
    pub fn rmse(&self, ratings: &RatingsMatrix) -> f64 {
        let n = ratings.len();
        if n == 0 {
            return 0.0;
        }
        let sq: f64 = ratings
            .triples()
            .iter()
            .map(|&(i, j, r)| {
                let pred = self.u.row(i).dot(&self.v.row(j));
                (r - pred) * (r - pred)
            })
            .sum();
        (sq / n as f64).sqrt()
    }

    fn objective(&self, ratings: &RatingsMatrix) -> f64 {
        let sq: f64 = ratings
            .triples()
            .iter()
            .map(|&(i, j, r)| {
                let pred = self.u.row(i).dot(&self.v.row(j));
                (r - pred) * (r - pred)
            })
            .sum();
        sq + self.lambda_reg * (self.u.norm_squared() + self.v.norm_squared())
    }
}

/// Ridge solve for one row: `(F^T F + lambda I) x = F^T r` where `F` stacks
/// the factor rows of the entries this row rates.
fn solve_row(
    entries: &[(usize, f64)],
    factors: &DMatrix<f64>,
    rank: usize,
    lambda_reg: f64,
) -> Result<DVector<f64>> {
    let mut gram = DMatrix::<f64>::identity(rank, rank) * lambda_reg;
    let mut rhs = DVector::<f64>::zeros(rank);
    for &(other, rating) in entries {
        let f = factors.row(other).transpose();
        gram.ger(1.0, &f, &f, 1.0);
        rhs.axpy(rating, &f, 1.0);
    }
    linalg::symmetrize(&mut gram);
    let chol = linalg::spd_cholesky(&gram, "factorization ridge system")?;
    Ok(chol.solve(&rhs))
}

/// Alternating least squares with `sweeps` full passes (items then users per
/// pass is fixed as users first, then items). Deterministic given the seed;
/// per-row solves run in parallel.
pub fn als_factorize(
    ratings: &RatingsMatrix,
    rank: usize,
    lambda_reg: f64,
    sweeps: usize,
    seed: u64,
) -> Result<Factorization> {
    if rank == 0 {
        return Err(Error::invalid("rank", "must be >= 1"));
    }
    if !(lambda_reg > 0.0 && lambda_reg.is_finite()) {
        return Err(Error::invalid(
            "lambda_reg",
            "must be finite and > 0 (keeps every ridge system nonsingular)",
        ));
    }
    if sweeps == 0 {
        return Err(Error::invalid("sweeps", "must be >= 1"));
    }
    if ratings.len() == 0 {
        return Err(Error::invalid("ratings", "need at least one rating"));
    }

    let n_users = ratings.n_users();
    let n_items = ratings.n_items();
    let by_user = ratings.by_user();
    let by_item = ratings.by_item();

    // Small Gaussian initialization; U is solved first, so only V's
    // initialization matters for the trajectory.
    let mut init_rng = rng::stream(seed, &[purpose::ALS]);
    let mut init = |rows: usize| {
        DMatrix::from_fn(rows, rank, |_, _| {
            0.1 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut init_rng)
        })
    };
    let u = init(n_users);
    let v = init(n_items);

    let mut fac = Factorization {
        u,
        v,
        rank,
        lambda_reg,
        rmse_trace: Vec::with_capacity(sweeps + 1),
        objective_trace: Vec::with_capacity(2 * sweeps + 1),
    };
    fac.rmse_trace.push(fac.rmse(ratings));
    fac.objective_trace.push(fac.objective(ratings));

    for _ in 0..sweeps {
        let new_u: Vec<DVector<f64>> = (0..n_users)
            .into_par_iter()
            .map(|i| solve_row(&by_user[i], &fac.v, rank, lambda_reg))
            .collect::<Result<Vec<_>>>()?;
        for (i, row) in new_u.into_iter().enumerate() {
            fac.u.row_mut(i).copy_from(&row.transpose());
        }
        fac.objective_trace.push(fac.objective(ratings));

        let new_v: Vec<DVector<f64>> = (0..n_items)
            .into_par_iter()
            .map(|j| solve_row(&by_item[j], &fac.u, rank, lambda_reg))
            .collect::<Result<Vec<_>>>()?;
        for (j, row) in new_v.into_iter().enumerate() {
            fac.v.row_mut(j).copy_from(&row.transpose());
        }
        fac.objective_trace.push(fac.objective(ratings));
        fac.rmse_trace.push(fac.rmse(ratings));
    }
    Ok(fac)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_ratings(matrix: &DMatrix<f64>) -> RatingsMatrix {
        let mut triples = Vec::new();
        for i in 0..matrix.nrows() {
            for j in 0..matrix.ncols() {
                triples.push((i as u64, j as u64, matrix[(i, j)]));
            }
        }
        RatingsMatrix::from_triples(triples).unwrap()
    }

    fn rank_one_matrix(n: usize, m: usize) -> DMatrix<f64> {
        let u = DVector::from_fn(n, |i, _| 1.0 + 0.3 * i as f64);
        let v = DVector::from_fn(m, |j, _| 0.5 - 0.1 * j as f64);
        &u * v.transpose()
    }

    #[test]
    fn recovers_exact_rank_one_matrix() {
        let ratings = dense_ratings(&rank_one_matrix(12, 8));
        let fac = als_factorize(&ratings, 1, 1e-6, 20, 3).unwrap();
        let final_rmse = *fac.rmse_trace.last().unwrap();
        assert!(final_rmse <= 1e-4, "rmse {final_rmse}");
        // With negligible regularization the fit error itself shrinks
        // monotonically here, not just the objective.
        for w in fac.rmse_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn objective_never_increases_per_half_sweep() {
        let matrix = DMatrix::from_fn(15, 9, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let ratings = dense_ratings(&matrix);
        let fac = als_factorize(&ratings, 3, 0.1, 10, 11).unwrap();
        assert_eq!(fac.objective_trace.len(), 21);
        for w in fac.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "objective rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn heavy_regularization_shrinks_factors_toward_zero() {
        let ratings = dense_ratings(&rank_one_matrix(10, 6));
        let fac = als_factorize(&ratings, 2, 1e9, 5, 7).unwrap();
        assert!(fac.u.norm() < 1e-3);
        assert!(fac.v.norm() < 1e-3);
        // Predictions are ~0, so the RMSE approaches the ratings' RMS.
        let rms = (ratings
            .triples()
            .iter()
            .map(|&(_, _, r)| r * r)
            .sum::<f64>()
            / ratings.len() as f64)
            .sqrt();
        let rmse = *fac.rmse_trace.last().unwrap();
        assert!((rmse - rms).abs() < 1e-3, "rmse {rmse} vs rms {rms}");
    }

    #[test]
    fn same_seed_reproduces_factorization() {
        let ratings = dense_ratings(&rank_one_matrix(8, 5));
        let a = als_factorize(&ratings, 2, 0.1, 5, 42).unwrap();
        let b = als_factorize(&ratings, 2, 0.1, 5, 42).unwrap();
        assert_eq!(a.u, b.u);
        assert_eq!(a.v, b.v);
        assert_eq!(a.objective_trace, b.objective_trace);
    }

    #[test]
    fn rejects_bad_parameters() {
        let ratings = dense_ratings(&rank_one_matrix(4, 3));
        assert!(als_factorize(&ratings, 0, 0.1, 5, 0).is_err());
        assert!(als_factorize(&ratings, 2, 0.0, 5, 0).is_err());
        assert!(als_factorize(&ratings, 2, 0.1, 0, 0).is_err());
    }
}
