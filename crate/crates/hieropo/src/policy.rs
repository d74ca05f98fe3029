//! Pessimistic (lower-confidence-bound) policies learned from logged data.
//!
//! Every learner produces the same artifact: a per-task Gaussian belief
//! `(mean, cov)` over the task's reward parameter, plus a width multiplier
//! `alpha`. Acting on a slate scores each action by
//! `phi^T mean - alpha * sqrt(phi^T cov phi)` and takes the argmax.
//!
//! The learners differ only in which belief they plug in:
//! - [`fit_hieropo`]: the marginal task posterior of the hierarchical model;
//! - [`fit_flatopo`]: a single-level posterior with the collapsed prior
//!   `N(mu_q, Sigma_q + Sigma_0)`, ignoring cross-task structure;
//! - [`fit_oracleopo`]: the conditional task posterior at the true
//!   hyper-parameter, which only a simulator can provide;
//! - [`fit_single_task`]: a standalone single-level posterior under an
//!   explicitly supplied prior, with no hierarchy at all.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{HierModelConfig, LoggedDataset, FEATURE_NORM_TOL};
use crate::posterior::{self, compute_task_statistics, conditional_task_posterior};

/// Which learner produced a policy. Serialized as a lowercase tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Hier,
    Flat,
    Oracle,
    Single,
}

impl LearnerKind {
    pub fn tag(self) -> &'static str {
        match self {
            LearnerKind::Hier => "hier",
            LearnerKind::Flat => "flat",
            LearnerKind::Oracle => "oracle",
            LearnerKind::Single => "single",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hier" => Ok(LearnerKind::Hier),
            "flat" => Ok(LearnerKind::Flat),
            "oracle" => Ok(LearnerKind::Oracle),
            "single" => Ok(LearnerKind::Single),
            other => Err(Error::invalid(
                "learner",
                format!("unknown learner '{other}' (expected hier, flat, oracle, or single)"),
            )),
        }
    }
}

impl std::fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Scored action: point estimate, confidence width, and their difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardEstimate {
    pub r_hat: f64,
    pub width: f64,
    pub lcb: f64,
    /// The multiplier the width was computed with.
    pub alpha: f64,
}

/// A slate of candidate actions, one feature row per action.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSlate {
    features: DMatrix<f64>,
}

impl ContextSlate {
    /// Validates that every row has norm at most 1 (within tolerance).
    pub fn new(features: DMatrix<f64>) -> Result<Self> {
        for (i, row) in features.row_iter().enumerate() {
            let norm = row.norm();
            if norm > 1.0 + FEATURE_NORM_TOL {
                return Err(Error::FeatureNormExceeded { index: i, norm });
            }
        }
        Ok(Self { features })
    }

    /// Number of actions.
    pub fn k(&self) -> usize {
        self.features.nrows()
    }

    /// Feature dimension.
    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    /// Feature vector of one action.
    pub fn action_features(&self, action: usize) -> DVector<f64> {
        self.features.row(action).transpose()
    }
}

/// One task's belief inside a learned policy.
#[derive(Debug, Clone)]
pub struct TaskBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// A fitted pessimistic policy for all tasks.
#[derive(Debug, Clone)]
pub struct LearnedPolicy {
    learner: LearnerKind,
    alpha: f64,
    d: usize,
    tasks: Vec<TaskBelief>,
}

impl LearnedPolicy {
    /// Builds a policy from raw parts, validating shapes.
    pub fn from_parts(
        learner: LearnerKind,
        alpha: f64,
        d: usize,
        tasks: Vec<TaskBelief>,
    ) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::invalid("alpha", "must be finite and >= 0"));
        }
        if tasks.is_empty() {
            return Err(Error::invalid("tasks", "policy needs at least one task"));
        }
        for (i, t) in tasks.iter().enumerate() {
            if t.mean.len() != d || t.cov.nrows() != d || t.cov.ncols() != d {
                return Err(Error::DimensionMismatch {
                    what: format!("belief of task {i}"),
                    expected: d,
                    actual: t.mean.len(),
                });
            }
        }
        Ok(Self {
            learner,
            alpha,
            d,
            tasks,
        })
    }

    pub fn learner(&self) -> LearnerKind {
        self.learner
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.tasks.len()
    }

    pub fn task(&self, task: usize) -> Result<&TaskBelief> {
        self.tasks.get(task).ok_or(Error::TaskOutOfRange {
            index: 0,
            task_id: task + 1,
            m: self.tasks.len(),
        })
    }

    pub fn tasks(&self) -> &[TaskBelief] {
        &self.tasks
    }

    /// Scores every action of a slate for one task.
    pub fn score(&self, task: usize, slate: &ContextSlate) -> Result<Vec<RewardEstimate>> {
        let belief = self.task(task)?;
        if slate.d() != self.d {
            return Err(Error::DimensionMismatch {
                what: "slate features vs policy".to_string(),
                expected: self.d,
                actual: slate.d(),
            });
        }
        let mut out = Vec::with_capacity(slate.k());
        for a in 0..slate.k() {
            let phi = slate.action_features(a);
            let r_hat = phi.dot(&belief.mean);
            // Rounding can push the quadratic form a hair below zero.
            let var = linalg::quad_form(&belief.cov, &phi).max(0.0);
            let width = self.alpha * var.sqrt();
            out.push(RewardEstimate {
                r_hat,
                width,
                lcb: r_hat - width,
                alpha: self.alpha,
            });
        }
        Ok(out)
    }

    /// Picks the action with the highest lower confidence bound; ties go to
    /// the lowest index so the choice is deterministic.
    pub fn act(&self, task: usize, slate: &ContextSlate) -> Result<usize> {
        let scores = self.score(task, slate)?;
        let mut best: Option<(usize, f64)> = None;
        for (a, est) in scores.iter().enumerate() {
            if best.map_or(true, |(_, lcb)| est.lcb > lcb) {
                best = Some((a, est.lcb));
            }
        }
        best.map(|(a, _)| a).ok_or(Error::EmptySlate)
    }
}

/// Hierarchical learner: belief is the marginal task posterior.
pub fn fit_hieropo(
    dataset: &LoggedDataset,
    config: &HierModelConfig,
    alpha: f64,
) -> Result<LearnedPolicy> {
    let marginals = posterior::marginal_posteriors(dataset, config)?;
    let tasks = marginals
        .into_iter()
        .map(|p| TaskBelief {
            mean: p.mean,
            cov: p.cov,
        })
        .collect();
    LearnedPolicy::from_parts(LearnerKind::Hier, alpha, config.d(), tasks)
}

/// Flat learner: each task updated independently from the collapsed prior
/// `N(mu_q, Sigma_q + Sigma_0)`.
pub fn fit_flatopo(
    dataset: &LoggedDataset,
    config: &HierModelConfig,
    alpha: f64,
) -> Result<LearnedPolicy> {
    let stats = compute_task_statistics(dataset, config)?;
    let prior_cov = config.sigma_q() + config.sigma_0();
    let prior_prec = linalg::spd_inverse(&prior_cov, "collapsed prior")?;
    let prior_score = &prior_prec * config.mu_q();
    let tasks = stats
        .iter()
        .map(|s| -> Result<TaskBelief> {
            if s.count == 0 {
                return Ok(TaskBelief {
                    mean: config.mu_q().clone(),
                    cov: prior_cov.clone(),
                });
            }
            let mut precision = &prior_prec + &s.g;
            linalg::symmetrize(&mut precision);
            let chol = linalg::spd_cholesky(&precision, "flat task precision")?;
            let mut cov = chol.inverse();
            linalg::symmetrize(&mut cov);
            let mean = chol.solve(&(&prior_score + &s.b));
            Ok(TaskBelief { mean, cov })
        })
        .collect::<Result<Vec<_>>>()?;
    LearnedPolicy::from_parts(LearnerKind::Flat, alpha, config.d(), tasks)
}

/// Oracle learner: conditional task posterior at the true hyper-parameter.
/// Only meaningful in simulation, where `mu_star` is known.
pub fn fit_oracleopo(
    dataset: &LoggedDataset,
    config: &HierModelConfig,
    alpha: f64,
    mu_star: &DVector<f64>,
) -> Result<LearnedPolicy> {
    if mu_star.len() != config.d() {
        return Err(Error::DimensionMismatch {
            what: "mu_star vs model".to_string(),
            expected: config.d(),
            actual: mu_star.len(),
        });
    }
    let stats = compute_task_statistics(dataset, config)?;
    let tasks = stats
        .iter()
        .map(|s| -> Result<TaskBelief> {
            let post = conditional_task_posterior(s, config)?;
            Ok(TaskBelief {
                mean: post.mean(mu_star),
                cov: post.cov,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LearnedPolicy::from_parts(LearnerKind::Oracle, alpha, config.d(), tasks)
}

/// Standalone single-task learner: one Bayesian linear-regression update
/// under the supplied prior. The dataset must contain exactly one task.
pub fn fit_single_task(
    dataset: &LoggedDataset,
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    sigma: f64,
    alpha: f64,
) -> Result<LearnedPolicy> {
    if dataset.m() != 1 {
        return Err(Error::invalid(
            "dataset",
            format!("single-task learner needs m = 1, got m = {}", dataset.m()),
        ));
    }
    let d = dataset.d();
    if prior_mean.len() != d || prior_cov.nrows() != d || prior_cov.ncols() != d {
        return Err(Error::DimensionMismatch {
            what: "single-task prior".to_string(),
            expected: d,
            actual: prior_mean.len(),
        });
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma", "must be finite and > 0"));
    }
    linalg::check_spd(prior_cov, d, crate::model::SPD_TOL, "single-task prior")?;

    let inv_noise = sigma.powi(-2);
    let mut b = DVector::zeros(d);
    let mut g = DMatrix::zeros(d, d);
    for r in dataset.records() {
        b.axpy(inv_noise * r.reward, &r.features, 1.0);
        g.ger(inv_noise, &r.features, &r.features, 1.0);
    }

    let belief = if dataset.is_empty() {
        TaskBelief {
            mean: prior_mean.clone(),
            cov: prior_cov.clone(),
        }
    } else {
        let prior_prec = linalg::spd_inverse(prior_cov, "single-task prior")?;
        let mut precision = &prior_prec + &g;
        linalg::symmetrize(&mut precision);
        let chol = linalg::spd_cholesky(&precision, "single-task precision")?;
        let mut cov = chol.inverse();
        linalg::symmetrize(&mut cov);
        let mean = chol.solve(&(&prior_prec * prior_mean + &b));
        TaskBelief { mean, cov }
    };
    LearnedPolicy::from_parts(LearnerKind::Single, alpha, d, vec![belief])
}
