//! Executable suboptimality bounds and the assumption checks behind them.
//!
//! The bound calculators evaluate closed-form expressions; the only moving
//! parts are the eigenvalue summaries collected in [`BoundInputs`] and the
//! coverage constant `gamma`, which [`estimate_gamma`] measures from data.
//!
//! Conventions for degenerate inputs:
//! - a task with no records contributes a zero summand to the hyper term
//!   (the limit of the expression as its count goes to zero);
//! - `gamma = 0` is always admissible and removes all data dependence;
//! - the general hyper-term variant needs the smallest eigenvalue of every
//!   task's optimal-feature second moment; if one is numerically singular
//!   the bound is vacuous and reported as infinity with a diagnostic rather
//!   than silently regularized.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::envsim::{estimate_gstar, Environment};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{HierModelConfig, LoggedRecord, FEATURE_NORM_TOL};
use crate::posterior::TaskStatistics;
use crate::rng::{self, purpose};

/// Relative eigenvalue threshold below which a second-moment matrix is
/// treated as singular.
const SINGULAR_EIG_TOL: f64 = 1e-12;

/// Tolerance for the diagonal/sparsity structure check.
const STRUCTURE_TOL: f64 = 1e-12;

/// Which hyper-term form to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundVariant {
    /// Full form, needs per-task optimal-feature eigenvalue summaries.
    General,
    /// Sharper form valid for 1-sparse features with diagonal covariances.
    Diagonal,
}

impl BoundVariant {
    pub fn tag(self) -> &'static str {
        match self {
            BoundVariant::General => "general",
            BoundVariant::Diagonal => "diagonal",
        }
    }
}

/// Eigenvalue summaries and counts a bound evaluation needs.
#[derive(Debug, Clone)]
pub struct BoundInputs {
    /// Failure probability, in (0, 1).
    pub delta: f64,
    /// Feature dimension.
    pub d: usize,
    /// Coverage constant; 0 disables all data-dependent terms.
    pub gamma: f64,
    /// Reward noise standard deviation.
    pub sigma: f64,
    /// Smallest eigenvalue of the task-prior precision, 1/lambda_max(Sigma_0).
    pub lambda_min_prec_0: f64,
    /// Smallest eigenvalue of the hyper-prior precision, 1/lambda_max(Sigma_q).
    pub lambda_min_prec_q: f64,
    /// Largest eigenvalue of the task-prior covariance Sigma_0.
    pub lambda_max_cov_0: f64,
    /// Smallest eigenvalue of the collapsed-prior precision,
    /// 1/lambda_max(Sigma_q + Sigma_0).
    pub lambda_min_prec_flat: f64,
    /// Record count per task.
    pub counts: Vec<usize>,
    /// Per-task largest eigenvalue of the inverse optimal-feature second
    /// moment (infinity when singular). Required by the general variant.
    pub gstar_inv_max_eig: Option<Vec<f64>>,
}

impl BoundInputs {
    /// Derives all eigenvalue summaries from a model configuration.
    /// `gstar` supplies the per-task optimal-feature second moments when the
    /// general variant will be evaluated.
    pub fn from_model(
        model: &HierModelConfig,
        counts: Vec<usize>,
        gamma: f64,
        delta: f64,
        gstar: Option<&[DMatrix<f64>]>,
    ) -> Result<Self> {
        let lambda_max_cov_0 = linalg::max_eigenvalue(model.sigma_0());
        let lambda_max_cov_q = linalg::max_eigenvalue(model.sigma_q());
        let lambda_max_flat = linalg::max_eigenvalue(&(model.sigma_q() + model.sigma_0()));
        let gstar_inv_max_eig = gstar
            .map(|mats| -> Result<Vec<f64>> {
                if mats.len() != counts.len() {
                    return Err(Error::DimensionMismatch {
                        what: "gstar matrices vs task counts".to_string(),
                        expected: counts.len(),
                        actual: mats.len(),
                    });
                }
                Ok(mats
                    .iter()
                    .map(|g| {
                        let max = linalg::max_eigenvalue(g);
                        let min = linalg::min_eigenvalue(g);
                        if min <= SINGULAR_EIG_TOL * max.max(1.0) {
                            f64::INFINITY
                        } else {
                            1.0 / min
                        }
                    })
                    .collect())
            })
            .transpose()?;
        let inputs = Self {
            delta,
            d: model.d(),
            gamma,
            sigma: model.sigma(),
            lambda_min_prec_0: 1.0 / lambda_max_cov_0,
            lambda_min_prec_q: 1.0 / lambda_max_cov_q,
            lambda_max_cov_0,
            lambda_min_prec_flat: 1.0 / lambda_max_flat,
            counts,
            gstar_inv_max_eig,
        };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid("delta", "must lie strictly in (0, 1)"));
        }
        if self.d == 0 {
            return Err(Error::invalid("d", "must be >= 1"));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::invalid("gamma", "must be >= 0"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("sigma", "must be finite and > 0"));
        }
        for (name, v) in [
            ("lambda_min_prec_0", self.lambda_min_prec_0),
            ("lambda_min_prec_q", self.lambda_min_prec_q),
            ("lambda_max_cov_0", self.lambda_max_cov_0),
            ("lambda_min_prec_flat", self.lambda_min_prec_flat),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be finite and > 0"));
            }
        }
        if self.counts.is_empty() {
            return Err(Error::invalid("counts", "need at least one task"));
        }
        if let Some(eigs) = &self.gstar_inv_max_eig {
            if eigs.len() != self.counts.len() {
                return Err(Error::DimensionMismatch {
                    what: "gstar eigenvalues vs task counts".to_string(),
                    expected: self.counts.len(),
                    actual: eigs.len(),
                });
            }
            if eigs.iter().any(|v| *v < 0.0 || v.is_nan()) {
                return Err(Error::invalid(
                    "gstar_inv_max_eig",
                    "entries must be nonnegative (infinity allowed)",
                ));
            }
        }
        Ok(())
    }

    fn task_count(&self, task: usize) -> Result<usize> {
        self.counts.get(task).copied().ok_or(Error::TaskOutOfRange {
            index: 0,
            task_id: task + 1,
            m: self.counts.len(),
        })
    }
}

/// One evaluated bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub alpha: f64,
    pub epsilon_task: f64,
    pub epsilon_hyper: f64,
    pub epsilon_total: f64,
    pub variant: BoundVariant,
    pub gamma_used: f64,
    /// Set when the bound is vacuous (e.g. a singular second moment in the
    /// general variant).
    pub diagnostic: Option<String>,
}

/// The width multiplier `sqrt(5 d ln(1/delta))`.
pub fn alpha_schedule(d: usize, delta: f64) -> Result<f64> {
    if d == 0 {
        return Err(Error::invalid("d", "must be >= 1"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta", "must lie strictly in (0, 1)"));
    }
    Ok((5.0 * d as f64 * (1.0 / delta).ln()).sqrt())
}

fn task_term(inputs: &BoundInputs, alpha: f64, prec_floor: f64, n: usize) -> f64 {
    let denom = prec_floor + inputs.gamma * inputs.sigma.powi(-2) * n as f64;
    alpha * (4.0 * inputs.d as f64 / denom).sqrt()
}

/// Single-task suboptimality bound for a task with `n` records; no hyper
/// term.
pub fn single_task_bound(inputs: &BoundInputs, n: usize) -> Result<BoundReport> {
    inputs.validate()?;
    let alpha = alpha_schedule(inputs.d, inputs.delta)?;
    let epsilon_task = task_term(inputs, alpha, inputs.lambda_min_prec_0, n);
    Ok(BoundReport {
        alpha,
        epsilon_task,
        epsilon_hyper: 0.0,
        epsilon_total: epsilon_task,
        variant: BoundVariant::General,
        gamma_used: inputs.gamma,
        diagnostic: None,
    })
}

/// Multi-task suboptimality bound for one task: the single-task term plus
/// the hyper-parameter term in the requested variant.
pub fn multi_task_bound(
    inputs: &BoundInputs,
    task: usize,
    variant: BoundVariant,
) -> Result<BoundReport> {
    inputs.validate()?;
    let n_s = inputs.task_count(task)?;
    let alpha = alpha_schedule(inputs.d, inputs.delta)?;
    let epsilon_task = task_term(inputs, alpha, inputs.lambda_min_prec_0, n_s);

    let gstar_inv = match (variant, &inputs.gstar_inv_max_eig) {
        (BoundVariant::General, Some(eigs)) => Some(eigs),
        (BoundVariant::General, None) => {
            return Err(Error::invalid(
                "gstar_inv_max_eig",
                "the general variant needs per-task optimal-feature eigenvalues",
            ));
        }
        (BoundVariant::Diagonal, _) => None,
    };

    let mut diagnostic = None;
    let mut denom = inputs.lambda_min_prec_q;
    let mut vacuous = false;
    for (z, &n_z) in inputs.counts.iter().enumerate() {
        if n_z == 0 || inputs.gamma == 0.0 {
            // Limit of the summand as the observation weight vanishes.
            continue;
        }
        let per_obs = inputs.sigma.powi(2) / (inputs.gamma * n_z as f64);
        let summand = match gstar_inv {
            Some(eigs) if eigs[z].is_infinite() => {
                vacuous = true;
                diagnostic = Some(format!(
                    "task {}: optimal-feature second moment is singular; the general \
                     hyper term is vacuous (use the diagonal variant if its \
                     assumptions hold)",
                    z + 1
                ));
                break;
            }
            Some(eigs) => 1.0 / (inputs.lambda_max_cov_0 + per_obs * eigs[z]),
            None => 1.0 / (inputs.lambda_max_cov_0 + per_obs),
        };
        denom += summand;
    }

    let epsilon_hyper = if vacuous {
        f64::INFINITY
    } else {
        alpha * (4.0 * inputs.d as f64 / denom).sqrt()
    };
    Ok(BoundReport {
        alpha,
        epsilon_task,
        epsilon_hyper,
        epsilon_total: epsilon_task + epsilon_hyper,
        variant,
        gamma_used: inputs.gamma,
        diagnostic,
    })
}

/// Suboptimality bound of the flat learner: the single-task form with the
/// collapsed prior `Sigma_q + Sigma_0`.
pub fn flatopo_bound(inputs: &BoundInputs, n_s: usize) -> Result<f64> {
    inputs.validate()?;
    let alpha = alpha_schedule(inputs.d, inputs.delta)?;
    Ok(task_term(inputs, alpha, inputs.lambda_min_prec_flat, n_s))
}

/// Result of measuring the coverage constant from data.
#[derive(Debug, Clone)]
pub struct GammaEstimate {
    /// Largest gamma admitted by every task jointly (the headline value).
    pub gamma: f64,
    /// Per-task largest admissible gamma; infinity when the task imposes no
    /// constraint (no optimal-feature mass).
    pub per_task: Vec<f64>,
    /// Smallest eigenvalue of `G_s - gamma sigma^{-2} n_s G_{s,*}` over all
    /// tasks at the returned gamma; the certificate that gamma is feasible.
    pub certificate_min_eig: f64,
    /// Largest entry-wise Monte Carlo standard error across the estimated
    /// second moments.
    pub gstar_max_std_error: f64,
    /// The estimated per-task optimal-feature second moments, kept so bound
    /// evaluation can reuse them without repeating the Monte Carlo pass.
    pub gstars: Vec<DMatrix<f64>>,
}

/// Largest `gamma` with `g >= gamma * sigma^{-2} * n_s * gstar` in the PSD
/// order, computed on the range of `gstar`: directions the optimal policy
/// never excites impose no constraint. Returns infinity when `gstar` has no
/// numerical mass and 0 when the task has no records but `gstar` does.
pub fn gamma_for_task(
    g: &DMatrix<f64>,
    gstar: &DMatrix<f64>,
    sigma: f64,
    n_s: usize,
) -> Result<f64> {
    let d = g.nrows();
    if gstar.nrows() != d || gstar.ncols() != d || g.ncols() != d {
        return Err(Error::DimensionMismatch {
            what: "gamma matrices".to_string(),
            expected: d,
            actual: gstar.nrows(),
        });
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma", "must be finite and > 0"));
    }
    let eig = linalg::symmetric_eigen(gstar);
    let max_eig = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let threshold = SINGULAR_EIG_TOL * max_eig.max(1.0);
    let range: Vec<usize> = (0..d)
        .filter(|&i| eig.eigenvalues[i] > threshold)
        .collect();
    if range.is_empty() {
        // gstar is numerically zero: the inequality is vacuous.
        return Ok(f64::INFINITY);
    }
    if n_s == 0 {
        return Ok(0.0);
    }
    // Whiten the scaled second moment on its range and take the smallest
    // eigenvalue of the whitened empirical precision.
    let scale = sigma.powi(-2) * n_s as f64;
    let mut w = DMatrix::<f64>::zeros(d, range.len());
    for (col, &i) in range.iter().enumerate() {
        let factor = 1.0 / (scale * eig.eigenvalues[i]).sqrt();
        w.column_mut(col)
            .copy_from(&(eig.eigenvectors.column(i) * factor));
    }
    let mut reduced = w.transpose() * g * &w;
    linalg::symmetrize(&mut reduced);
    Ok(linalg::min_eigenvalue(&reduced).max(0.0))
}

fn certificate_min_eig(
    stats: &[TaskStatistics],
    gstars: &[DMatrix<f64>],
    sigma: f64,
    gamma: f64,
) -> f64 {
    let mut min_eig = f64::INFINITY;
    for (s, stat) in stats.iter().enumerate() {
        let gap = &stat.g - &gstars[s] * (gamma * sigma.powi(-2) * stat.count as f64);
        min_eig = min_eig.min(linalg::min_eigenvalue(&gap));
    }
    min_eig
}

/// Measures the largest coverage constant the dataset supports against the
/// optimal policy of each task, estimating each task's optimal-feature
/// second moment by Monte Carlo.
///
/// The returned value always passes the direct PSD certificate
/// `min_eig(G_s - gamma sigma^{-2} n_s G_{s,*}) >= -1e-8`; when the
/// range-restricted eigenvalue computation is slightly optimistic for a
/// rank-deficient second moment, the value is tightened by bisection until
/// the certificate holds.
pub fn estimate_gamma(
    stats: &[TaskStatistics],
    env: &Environment,
    n_eval: usize,
    seed: u64,
) -> Result<GammaEstimate> {
    if stats.len() != env.m() {
        return Err(Error::DimensionMismatch {
            what: "task statistics vs environment".to_string(),
            expected: env.m(),
            actual: stats.len(),
        });
    }
    let sigma = env.model().sigma();
    let estimates: Vec<(DMatrix<f64>, f64)> = (0..env.m())
        .into_par_iter()
        .map(|s| {
            let mut task_rng = rng::stream(seed, &[purpose::GSTAR, s as u64]);
            estimate_gstar(env, s, n_eval, &mut task_rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let gstars: Vec<DMatrix<f64>> = estimates.iter().map(|(g, _)| g.clone()).collect();
    let gstar_max_std_error = estimates.iter().map(|(_, se)| *se).fold(0.0, f64::max);

    let per_task = stats
        .iter()
        .zip(&gstars)
        .map(|(stat, gstar)| gamma_for_task(&stat.g, gstar, sigma, stat.count))
        .collect::<Result<Vec<f64>>>()?;
    let mut gamma = per_task.iter().cloned().fold(f64::INFINITY, f64::min);
    if gamma.is_infinite() {
        // No task constrains gamma at all.
        return Ok(GammaEstimate {
            gamma,
            per_task,
            certificate_min_eig: f64::INFINITY,
            gstar_max_std_error,
            gstars,
        });
    }

    let mut cert = certificate_min_eig(stats, &gstars, sigma, gamma);
    if cert < -1e-8 {
        // Feasibility is monotone in gamma, so bisection finds the largest
        // certified value below the optimistic candidate.
        let mut lo = 0.0;
        let mut hi = gamma;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if certificate_min_eig(stats, &gstars, sigma, mid) < -1e-8 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        gamma = lo;
        cert = certificate_min_eig(stats, &gstars, sigma, gamma);
    }
    Ok(GammaEstimate {
        gamma,
        per_task,
        certificate_min_eig: cert,
        gstar_max_std_error,
        gstars,
    })
}

/// Feature-norm check result.
#[derive(Debug, Clone)]
pub struct NormCheck {
    pub ok: bool,
    pub max_norm: f64,
    /// Record index of the first violation, if any.
    pub worst_index: Option<usize>,
}

/// Structure check behind the diagonal bound variant.
#[derive(Debug, Clone)]
pub struct StructureCheck {
    pub ok: bool,
    pub features_one_sparse: bool,
    pub sigma_q_diagonal: bool,
    pub sigma_0_diagonal: bool,
}

/// Outcome of checking the analysis assumptions against data. Failures are
/// reported, never raised.
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    /// Bounded feature norms.
    pub norms: NormCheck,
    /// Coverage estimate; present only when an environment was supplied.
    pub coverage: Option<GammaEstimate>,
    /// 1-sparse features and diagonal covariances.
    pub structure: StructureCheck,
}

/// Checks bounded norms, coverage (when ground truth is available), and the
/// diagonal structure assumption for a set of raw records.
pub fn check_assumptions(
    records: &[LoggedRecord],
    model: &HierModelConfig,
    env: Option<&Environment>,
    n_eval: usize,
    seed: u64,
) -> Result<AssumptionReport> {
    let mut max_norm: f64 = 0.0;
    let mut worst_index = None;
    for (i, r) in records.iter().enumerate() {
        let norm = r.features.norm();
        if norm > max_norm {
            max_norm = norm;
        }
        if worst_index.is_none() && norm > 1.0 + FEATURE_NORM_TOL {
            worst_index = Some(i);
        }
    }
    let norms = NormCheck {
        ok: worst_index.is_none(),
        max_norm,
        worst_index,
    };

    let coverage = env
        .map(|env| -> Result<GammaEstimate> {
            let mut stats: Vec<TaskStatistics> =
                (0..env.m()).map(|_| TaskStatistics::zero(env.d())).collect();
            let inv_noise = model.sigma().powi(-2);
            for r in records {
                if r.task >= stats.len() {
                    return Err(Error::TaskOutOfRange {
                        index: 0,
                        task_id: r.task + 1,
                        m: stats.len(),
                    });
                }
                let s = &mut stats[r.task];
                s.b.axpy(inv_noise * r.reward, &r.features, 1.0);
                s.g.ger(inv_noise, &r.features, &r.features, 1.0);
                s.count += 1;
            }
            estimate_gamma(&stats, env, n_eval, seed)
        })
        .transpose()?;

    let features_one_sparse = records.iter().all(|r| {
        r.features.iter().filter(|v| v.abs() > STRUCTURE_TOL).count() <= 1
    });
    let is_diagonal = |m: &DMatrix<f64>| {
        m.row_iter().enumerate().all(|(i, row)| {
            row.iter()
                .enumerate()
                .all(|(j, v)| i == j || v.abs() <= STRUCTURE_TOL)
        })
    };
    let sigma_q_diagonal = is_diagonal(model.sigma_q());
    let sigma_0_diagonal = is_diagonal(model.sigma_0());
    let structure = StructureCheck {
        ok: features_one_sparse && sigma_q_diagonal && sigma_0_diagonal,
        features_one_sparse,
        sigma_q_diagonal,
        sigma_0_diagonal,
    };

    Ok(AssumptionReport {
        norms,
        coverage,
        structure,
    })
}
