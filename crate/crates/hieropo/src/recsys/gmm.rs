//! Full-covariance Gaussian mixture fitting by expectation-maximization.
//!
//! Responsibilities are computed in log space (log-sum-exp), so widely
//! separated clusters do not underflow. Fitted covariances are stored as the
//! raw maximum-likelihood matrices; a 1e-6 diagonal jitter is applied only
//! transiently when a covariance is too singular to factorize for density
//! evaluation. This keeps the single-component fit exactly equal to the
//! sample mean and ML sample covariance.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{self, purpose};

/// Diagonal jitter used when a covariance cannot be factorized as-is.
const COV_JITTER: f64 = 1e-6;

/// Responsibility mass below which a component is considered collapsed.
const DEGENERATE_MASS: f64 = 1e-8;

/// A fitted mixture with its convergence trace.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub k: usize,
    /// Mixing weights; sum to 1.
    pub weights: DVector<f64>,
    /// Component means, one row per component.
    pub means: DMatrix<f64>,
    /// Raw ML covariances, one per component.
    pub covariances: Vec<DMatrix<f64>>,
    /// Total log-likelihood after each EM iteration.
    pub log_likelihood_trace: Vec<f64>,
    /// Human-readable notes about degenerate components that were
    /// reinitialized during fitting.
    pub reinit_events: Vec<String>,
}

/// A component prepared for density evaluation.
struct Component {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl Component {
    /// Factorizes `cov`, falling back to a jittered copy when the raw ML
    /// matrix is singular.
    fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        let chol = match Cholesky::new(cov.clone()) {
            Some(c) => c,
            None => {
                let jittered = cov + DMatrix::<f64>::identity(d, d) * COV_JITTER;
                linalg::spd_cholesky(&jittered, "mixture covariance")?
            }
        };
        let log_det: f64 = (0..d).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>() * 2.0;
        let log_norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(Self {
            mean,
            chol,
            log_norm,
        })
    }

    fn log_density(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.mean;
        let solved = self.chol.solve(&diff);
        self.log_norm - 0.5 * diff.dot(&solved)
    }
}

impl GmmFit {
    fn components(&self) -> Result<Vec<Component>> {
        (0..self.k)
            .map(|c| Component::new(self.means.row(c).transpose(), &self.covariances[c]))
            .collect()
    }

    /// Hard assignment of each point to its most responsible component.
    pub fn assignments(&self, points: &DMatrix<f64>) -> Result<Vec<usize>> {
        let comps = self.components()?;
        Ok((0..points.nrows())
            .map(|i| {
                let x = points.row(i).transpose();
                let mut best = 0;
                let mut best_score = f64::NEG_INFINITY;
                for (c, comp) in comps.iter().enumerate() {
                    let score = self.weights[c].ln() + comp.log_density(&x);
                    if score > best_score {
                        best = c;
                        best_score = score;
                    }
                }
                best
            })
            .collect())
    }
}

/// Squared distance from each point to its nearest chosen center.
fn kmeans_pp_centers(points: &DMatrix<f64>, k: usize, rng: &mut ChaCha12Rng) -> Vec<usize> {
    let n = points.nrows();
    let mut centers = Vec::with_capacity(k);
    centers.push(rng.random_range(0..n));
    let mut dist2: Vec<f64> = (0..n)
        .map(|i| (points.row(i) - points.row(centers[0])).norm_squared())
        .collect();
    while centers.len() < k {
        let total: f64 = dist2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d2) in dist2.iter().enumerate() {
                target -= d2;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All remaining mass is at distance zero; any point works.
            rng.random_range(0..n)
        };
        centers.push(next);
        for i in 0..n {
            dist2[i] = dist2[i].min((points.row(i) - points.row(next)).norm_squared());
        }
    }
    centers
}

fn ml_covariance(points: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let (n, d) = (points.nrows(), points.ncols());
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for i in 0..n {
        let diff = points.row(i).transpose() - mean;
        cov.ger(1.0, &diff, &diff, 1.0);
    }
    cov / n as f64
}

/// Fits a `k`-component full-covariance mixture with EM, stopping when the
/// log-likelihood gain drops below `tol` or after `max_iters` iterations.
pub fn gmm_fit(
    points: &DMatrix<f64>,
    k: usize,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<GmmFit> {
    let (n, d) = (points.nrows(), points.ncols());
    if k == 0 {
        return Err(Error::invalid("k", "must be >= 1"));
    }
    if n < k {
        return Err(Error::invalid(
            "points",
            format!("need at least k = {k} points, got {n}"),
        ));
    }
    if !(tol >= 0.0 && tol.is_finite()) {
        return Err(Error::invalid("tol", "must be finite and >= 0"));
    }
    if max_iters == 0 {
        return Err(Error::invalid("max_iters", "must be >= 1"));
    }

    let mut init_rng = rng::stream(seed, &[purpose::GMM]);
    let center_idx = kmeans_pp_centers(points, k, &mut init_rng);
    let global_mean = DVector::from_fn(d, |j, _| points.column(j).mean());
    let global_cov = ml_covariance(points, &global_mean);

    let mut fit = GmmFit {
        k,
        weights: DVector::from_element(k, 1.0 / k as f64),
        means: DMatrix::from_fn(k, d, |c, j| points[(center_idx[c], j)]),
        covariances: vec![global_cov.clone(); k],
        log_likelihood_trace: Vec::new(),
        reinit_events: Vec::new(),
    };

    for _ in 0..max_iters {
        let comps = fit.components()?;
        let log_weights: Vec<f64> = (0..k).map(|c| fit.weights[c].ln()).collect();

        // E-step: per-point responsibilities via log-sum-exp, in parallel;
        // the following accumulation is sequential, so results do not depend
        // on the thread count.
        let per_point: Vec<(Vec<f64>, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let x = points.row(i).transpose();
                let scores: Vec<f64> = (0..k)
                    .map(|c| log_weights[c] + comps[c].log_density(&x))
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum_exp: f64 = scores.iter().map(|s| (s - max).exp()).sum();
                let log_norm = max + sum_exp.ln();
                let resp = scores.iter().map(|s| (s - log_norm).exp()).collect();
                (resp, log_norm)
            })
            .collect();

        let log_likelihood: f64 = per_point.iter().map(|(_, ll)| ll).sum();

        // M-step with ML covariances (denominator = component mass).
        let mut masses = vec![0.0f64; k];
        for (resp, _) in &per_point {
            for c in 0..k {
                masses[c] += resp[c];
            }
        }
        for c in 0..k {
            if masses[c] < DEGENERATE_MASS {
                // Collapsed component: restart it on the worst-fit point.
                let worst = per_point
                    .iter()
                    .enumerate()
                    .min_by(|(_, (_, a)), (_, (_, b))| a.total_cmp(b))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                fit.reinit_events.push(format!(
                    "component {} lost all responsibility mass (mass {:.3e}); \
                     reinitialized on point {}",
                    c, masses[c], worst
                ));
                fit.means.row_mut(c).copy_from(&points.row(worst));
                fit.covariances[c] = global_cov.clone();
                fit.weights[c] = 1.0 / n as f64;
                continue;
            }
            let mut mean = DVector::<f64>::zeros(d);
            for (i, (resp, _)) in per_point.iter().enumerate() {
                mean.axpy(resp[c], &points.row(i).transpose(), 1.0);
            }
            mean /= masses[c];
            let mut cov = DMatrix::<f64>::zeros(d, d);
            for (i, (resp, _)) in per_point.iter().enumerate() {
                let diff = points.row(i).transpose() - &mean;
                cov.ger(resp[c], &diff, &diff, 1.0);
            }
            cov /= masses[c];
            linalg::symmetrize(&mut cov);
            fit.means.row_mut(c).copy_from(&mean.transpose());
            fit.covariances[c] = cov;
            fit.weights[c] = masses[c] / n as f64;
        }
        // Reinitialized components leave the weights slightly off-simplex.
        let weight_sum: f64 = fit.weights.iter().sum();
        fit.weights /= weight_sum;

        let gain = fit
            .log_likelihood_trace
            .last()
            .map(|prev| log_likelihood - prev);
        fit.log_likelihood_trace.push(log_likelihood);
        if matches!(gain, Some(g) if g.abs() < tol) {
            break;
        }
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_blob(
        n: usize,
        center: &[f64],
        std: f64,
        rng: &mut ChaCha12Rng,
    ) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                center
                    .iter()
                    .map(|&c| {
                        let z: f64 = StandardNormal.sample(rng);
                        c + std * z
                    })
                    .collect()
            })
            .collect()
    }

    fn to_matrix(rows: Vec<Vec<f64>>) -> DMatrix<f64> {
        let n = rows.len();
        let d = rows[0].len();
        DMatrix::from_fn(n, d, |i, j| rows[i][j])
    }

    #[test]
    fn single_component_is_sample_mean_and_ml_covariance() {
        let mut rng = rng::stream(1, &[purpose::GMM, 99]);
        let points = to_matrix(gaussian_blob(40, &[1.0, -2.0], 0.7, &mut rng));
        let fit = gmm_fit(&points, 1, 50, 1e-12, 5).unwrap();

        let mean = DVector::from_fn(2, |j, _| points.column(j).mean());
        let cov = ml_covariance(&points, &mean);
        assert_relative_eq!(fit.means.row(0).transpose(), mean, epsilon = 1e-10);
        assert_relative_eq!(fit.covariances[0], cov, epsilon = 1e-10);
        assert_relative_eq!(fit.weights[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn recovers_two_separated_clusters() {
        let mut rng = rng::stream(2, &[purpose::GMM, 99]);
        let std = 0.3;
        // Centers 10 standard deviations apart.
        let mut rows = gaussian_blob(150, &[0.0, 0.0], std, &mut rng);
        rows.extend(gaussian_blob(150, &[3.0, 0.0], std, &mut rng));
        let points = to_matrix(rows);
        let fit = gmm_fit(&points, 2, 200, 1e-10, 7).unwrap();

        let mut found: Vec<DVector<f64>> =
            (0..2).map(|c| fit.means.row(c).transpose()).collect();
        found.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert!((&found[0] - DVector::from_vec(vec![0.0, 0.0])).norm() < 0.1);
        assert!((&found[1] - DVector::from_vec(vec![3.0, 0.0])).norm() < 0.1);
        assert_relative_eq!(fit.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn log_likelihood_never_decreases() {
        let mut rng = rng::stream(3, &[purpose::GMM, 99]);
        let mut rows = gaussian_blob(60, &[0.0, 0.0], 1.0, &mut rng);
        rows.extend(gaussian_blob(60, &[2.0, 1.0], 0.5, &mut rng));
        let points = to_matrix(rows);
        let fit = gmm_fit(&points, 3, 100, 0.0, 11).unwrap();
        assert!(fit.log_likelihood_trace.len() >= 2);
        for w in fit.log_likelihood_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "log-likelihood fell: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn assignments_split_separated_clusters() {
        let mut rng = rng::stream(4, &[purpose::GMM, 99]);
        let mut rows = gaussian_blob(50, &[0.0, 0.0], 0.2, &mut rng);
        rows.extend(gaussian_blob(70, &[5.0, 5.0], 0.2, &mut rng));
        let points = to_matrix(rows);
        let fit = gmm_fit(&points, 2, 100, 1e-10, 13).unwrap();
        let assignments = fit.assignments(&points).unwrap();
        let first = assignments[0];
        assert!(assignments[..50].iter().all(|&a| a == first));
        assert!(assignments[50..].iter().all(|&a| a != first));
        // Cluster sizes recover the 50/70 split via the weights.
        let mut weights: Vec<f64> = fit.weights.iter().cloned().collect();
        weights.sort_by(f64::total_cmp);
        assert_relative_eq!(weights[0], 50.0 / 120.0, epsilon = 1e-3);
        assert_relative_eq!(weights[1], 70.0 / 120.0, epsilon = 1e-3);
    }

    #[test]
    fn duplicate_points_do_not_break_fitting() {
        // Rank-deficient ML covariances force the jittered density path.
        let points = DMatrix::from_row_slice(6, 2, &[
            1.0, 2.0, //
            1.0, 2.0, //
            1.0, 2.0, //
            4.0, 0.0, //
            4.0, 0.0, //
            4.0, 0.0,
        ]);
        let fit = gmm_fit(&points, 2, 50, 1e-10, 17).unwrap();
        assert_relative_eq!(fit.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let assignments = fit.assignments(&points).unwrap();
        assert_ne!(assignments[0], assignments[3]);
    }

    #[test]
    fn rejects_more_components_than_points() {
        let points = DMatrix::zeros(2, 2);
        assert!(gmm_fit(&points, 3, 10, 1e-8, 0).is_err());
    }

    #[test]
    fn same_seed_reproduces_fit() {
        let mut rng = rng::stream(5, &[purpose::GMM, 99]);
        let points = to_matrix(gaussian_blob(80, &[0.5, -0.5], 1.0, &mut rng));
        let a = gmm_fit(&points, 3, 40, 1e-9, 23).unwrap();
        let b = gmm_fit(&points, 3, 40, 1e-9, 23).unwrap();
        assert_eq!(a.means, b.means);
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.log_likelihood_trace, b.log_likelihood_trace);
    }
}
