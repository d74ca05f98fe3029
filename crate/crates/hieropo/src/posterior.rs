//! Exact hierarchical posterior inference for the linear-Gaussian model.
//!
//! Three layers, all closed-form:
//! - per-task sufficient statistics `B_s`, `G_s`, `n_s`;
//! - the conditional task posterior given the hyper-parameter,
//!   `cov = (Sigma_0^{-1} + G_s)^{-1}`, `mean(mu) = cov (Sigma_0^{-1} mu + B_s)`;
//! - the hyper-posterior over the shared mean, and the marginal task
//!   posterior with the hyper-parameter integrated out.
//!
//! The hyper-posterior sums per-task contributions `(Sigma_0 + G_s^{-1})^{-1}`.
//! That expression is undefined for singular `G_s`, so the algebraically
//! equivalent forms `(G_s Sigma_0 + I)^{-1} G_s` and `(G_s Sigma_0 + I)^{-1} B_s`
//! are used instead; tasks without data then contribute exactly zero.
//!
//! [`joint_gaussian_oracle`] is an independent second route: it builds the
//! full joint Gaussian over (hyper-parameter, task parameters, rewards) and
//! conditions on the rewards directly. It exists to cross-check the
//! hierarchical formulas and is capped to small problem sizes.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{HierModelConfig, LoggedDataset};

/// Largest `m * d + n` the joint oracle will build.
pub const ORACLE_SIZE_LIMIT: usize = 2000;

/// Sufficient statistics of one task's logged records.
#[derive(Debug, Clone)]
pub struct TaskStatistics {
    /// `sigma^{-2} * sum_t phi_t y_t` over the task's records.
    pub b: DVector<f64>,
    /// `sigma^{-2} * sum_t phi_t phi_t^T` over the task's records.
    pub g: DMatrix<f64>,
    /// Number of records for the task.
    pub count: usize,
}

impl TaskStatistics {
    pub fn zero(d: usize) -> Self {
        Self {
            b: DVector::zeros(d),
            g: DMatrix::zeros(d, d),
            count: 0,
        }
    }
}

/// Per-task statistics for every task in `[m]`, including empty tasks.
pub fn compute_task_statistics(
    dataset: &LoggedDataset,
    config: &HierModelConfig,
) -> Result<Vec<TaskStatistics>> {
    if config.d() != dataset.d() {
        return Err(Error::DimensionMismatch {
            what: "dataset features vs model".to_string(),
            expected: config.d(),
            actual: dataset.d(),
        });
    }
    let inv_noise = config.sigma().powi(-2);
    let mut stats: Vec<TaskStatistics> = (0..dataset.m())
        .map(|_| TaskStatistics::zero(dataset.d()))
        .collect();
    for r in dataset.records() {
        let s = &mut stats[r.task];
        s.b.axpy(inv_noise * r.reward, &r.features, 1.0);
        s.g.ger(inv_noise, &r.features, &r.features, 1.0);
        s.count += 1;
    }
    Ok(stats)
}

/// Posterior of a task parameter conditioned on the hyper-parameter and the
/// task's own records. The mean is affine in the hyper-parameter value, so it
/// is stored as an operator plus offset.
#[derive(Debug, Clone)]
pub struct ConditionalTaskPosterior {
    /// `cov * Sigma_0^{-1}`; applied to the hyper-parameter value.
    pub mean_operator: DMatrix<f64>,
    /// `cov * B_s`.
    pub mean_offset: DVector<f64>,
    /// `(Sigma_0^{-1} + G_s)^{-1}`.
    pub cov: DMatrix<f64>,
}

impl ConditionalTaskPosterior {
    /// Posterior mean for a given hyper-parameter value.
    pub fn mean(&self, mu: &DVector<f64>) -> DVector<f64> {
        &self.mean_operator * mu + &self.mean_offset
    }
}

pub fn conditional_task_posterior(
    stats: &TaskStatistics,
    config: &HierModelConfig,
) -> Result<ConditionalTaskPosterior> {
    let d = config.d();
    if stats.count == 0 {
        // No data: the posterior is the prior around the hyper-parameter.
        return Ok(ConditionalTaskPosterior {
            mean_operator: DMatrix::identity(d, d),
            mean_offset: DVector::zeros(d),
            cov: config.sigma_0().clone(),
        });
    }
    let mut precision = config.sigma_0_inv() + &stats.g;
    linalg::symmetrize(&mut precision);
    let chol = linalg::spd_cholesky(&precision, "conditional task precision")?;
    let mut cov = chol.inverse();
    linalg::symmetrize(&mut cov);
    let mean_operator = &cov * config.sigma_0_inv();
    let mean_offset = &cov * &stats.b;
    Ok(ConditionalTaskPosterior {
        mean_operator,
        mean_offset,
        cov,
    })
}

/// Posterior of the shared hyper-parameter given the whole dataset.
#[derive(Debug, Clone)]
pub struct HyperPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

pub fn hyper_posterior(
    all_stats: &[TaskStatistics],
    config: &HierModelConfig,
) -> Result<HyperPosterior> {
    let d = config.d();
    if all_stats.iter().all(|s| s.count == 0) {
        return Ok(HyperPosterior {
            mean: config.mu_q().clone(),
            cov: config.sigma_q().clone(),
        });
    }

    let mut weight_sum = DMatrix::<f64>::zeros(d, d);
    let mut obs_sum = DVector::<f64>::zeros(d);
    for s in all_stats {
        if s.count == 0 {
            continue;
        }
        // (Sigma_0 + G_s^{-1})^{-1} = (G_s Sigma_0 + I)^{-1} G_s, and the
        // matching observation term (G_s Sigma_0 + I)^{-1} B_s. The left factor
        // is nonsymmetric, hence the LU solve.
        let lhs = &s.g * config.sigma_0() + DMatrix::<f64>::identity(d, d);
        let lu = lhs.lu();
        let mut weight = lu
            .solve(&s.g)
            .ok_or_else(|| Error::NotPositiveDefinite {
                what: "hyper-posterior task weight".to_string(),
            })?;
        linalg::symmetrize(&mut weight);
        let obs = lu.solve(&s.b).ok_or_else(|| Error::NotPositiveDefinite {
            what: "hyper-posterior task observation".to_string(),
        })?;
        weight_sum += weight;
        obs_sum += obs;
    }

    let sigma_q_inv = linalg::spd_inverse(config.sigma_q(), "sigma_q")?;
    let mut precision = &sigma_q_inv + &weight_sum;
    linalg::symmetrize(&mut precision);
    let chol = linalg::spd_cholesky(&precision, "hyper-posterior precision")?;
    let mut cov = chol.inverse();
    linalg::symmetrize(&mut cov);
    let mean = chol.solve(&(&sigma_q_inv * config.mu_q() + obs_sum));
    Ok(HyperPosterior { mean, cov })
}

/// Posterior of a task parameter given the whole dataset, hyper-parameter
/// integrated out.
#[derive(Debug, Clone)]
pub struct MarginalTaskPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

pub fn marginal_task_posterior(
    stats: &TaskStatistics,
    hyper: &HyperPosterior,
    config: &HierModelConfig,
) -> Result<MarginalTaskPosterior> {
    if stats.count == 0 {
        return Ok(MarginalTaskPosterior {
            mean: hyper.mean.clone(),
            cov: config.sigma_0() + &hyper.cov,
        });
    }
    let conditional = conditional_task_posterior(stats, config)?;
    let mean = conditional.mean(&hyper.mean);
    // cov = cond + (cond Sigma_0^{-1}) hyper_cov (cond Sigma_0^{-1})^T; the
    // mean operator is exactly cond Sigma_0^{-1}.
    let mut cov = &conditional.cov
        + &conditional.mean_operator * &hyper.cov * conditional.mean_operator.transpose();
    linalg::symmetrize(&mut cov);
    Ok(MarginalTaskPosterior { mean, cov })
}

/// Marginal posteriors for every task of a dataset.
pub fn marginal_posteriors(
    dataset: &LoggedDataset,
    config: &HierModelConfig,
) -> Result<Vec<MarginalTaskPosterior>> {
    let stats = compute_task_statistics(dataset, config)?;
    let hyper = hyper_posterior(&stats, config)?;
    stats
        .iter()
        .map(|s| marginal_task_posterior(s, &hyper, config))
        .collect()
}

/// Exact marginal posterior of one task parameter by brute force: build the
/// joint Gaussian over (hyper-parameter, all task parameters, all rewards)
/// and condition on the rewards. Independent of the hierarchical formulas.
pub fn joint_gaussian_oracle(
    dataset: &LoggedDataset,
    config: &HierModelConfig,
    task: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = config.d();
    let m = dataset.m();
    let n = dataset.len();
    if config.d() != dataset.d() {
        return Err(Error::DimensionMismatch {
            what: "dataset features vs model".to_string(),
            expected: config.d(),
            actual: dataset.d(),
        });
    }
    if task >= m {
        return Err(Error::invalid(
            "task",
            format!("task index {task} outside 0..{m}"),
        ));
    }
    let size = m * d + n;
    if size > ORACLE_SIZE_LIMIT {
        return Err(Error::OracleTooLarge {
            size,
            limit: ORACLE_SIZE_LIMIT,
        });
    }

    let prior_marginal = config.sigma_q() + config.sigma_0();
    if n == 0 {
        return Ok((config.mu_q().clone(), prior_marginal));
    }

    // Joint covariance layout: [mu_* | theta_1 .. theta_m | Y_1 .. Y_n].
    let total = d + m * d + n;
    let mut joint = DMatrix::<f64>::zeros(total, total);
    let theta_off = |s: usize| d + s * d;
    let y_off = d + m * d;

    joint.view_mut((0, 0), (d, d)).copy_from(config.sigma_q());
    for s in 0..m {
        joint
            .view_mut((0, theta_off(s)), (d, d))
            .copy_from(config.sigma_q());
        joint
            .view_mut((theta_off(s), 0), (d, d))
            .copy_from(config.sigma_q());
        for z in 0..m {
            let block = if s == z {
                prior_marginal.clone()
            } else {
                config.sigma_q().clone()
            };
            joint
                .view_mut((theta_off(s), theta_off(z)), (d, d))
                .copy_from(&block);
        }
    }
    let records = dataset.records();
    for (t, r) in records.iter().enumerate() {
        let cov_mu_y = config.sigma_q() * &r.features;
        joint.view_mut((0, y_off + t), (d, 1)).copy_from(&cov_mu_y);
        joint
            .view_mut((y_off + t, 0), (1, d))
            .copy_from(&cov_mu_y.transpose());
        for s in 0..m {
            let block = if s == r.task {
                &prior_marginal * &r.features
            } else {
                config.sigma_q() * &r.features
            };
            joint
                .view_mut((theta_off(s), y_off + t), (d, 1))
                .copy_from(&block);
            joint
                .view_mut((y_off + t, theta_off(s)), (1, d))
                .copy_from(&block.transpose());
        }
        for (u, r2) in records.iter().enumerate() {
            let shared = if r.task == r2.task {
                &prior_marginal
            } else {
                config.sigma_q()
            };
            let mut cov = (r.features.transpose() * shared * &r2.features)[(0, 0)];
            if t == u {
                cov += config.sigma().powi(2);
            }
            joint[(y_off + t, y_off + u)] = cov;
        }
    }

    // Condition theta_task on Y = observed rewards.
    let cov_ty = joint
        .view((theta_off(task), y_off), (d, n))
        .clone_owned();
    let cov_yy = joint.view((y_off, y_off), (n, n)).clone_owned();
    let chol = linalg::spd_cholesky(&cov_yy, "joint reward covariance")?;

    let residual = DVector::from_iterator(
        n,
        records
            .iter()
            .map(|r| r.reward - r.features.dot(config.mu_q())),
    );
    let mean = config.mu_q() + &cov_ty * chol.solve(&residual);
    let mut cov = &prior_marginal - &cov_ty * chol.solve(&cov_ty.transpose());
    linalg::symmetrize(&mut cov);
    Ok((mean, cov))
}
