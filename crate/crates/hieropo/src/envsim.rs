//! Synthetic multi-task environments, logged-data generation, and Monte
//! Carlo policy evaluation.
//!
//! An [`Environment`] holds the ground truth a simulator knows and a learner
//! must not see: the shared parameter `mu_star`, the per-task parameters, the
//! slate sampler, and the reward noise used during generation. It also embeds
//! the [`HierModelConfig`] that learners are given, so one artifact carries
//! both sides of an experiment.
//!
//! Evaluation is paired: for each sampled slate the optimal action (argmax of
//! the true mean reward) and the policy's action are scored on the same
//! features, so the per-slate regret is exactly nonnegative and the Monte
//! Carlo standard error applies to the difference, not the values.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{HierModelConfig, LoggedDataset, LoggedRecord};
use crate::policy::{self, ContextSlate, LearnedPolicy, LearnerKind};
use crate::rng::{self, purpose};

/// Parameters of the default synthetic benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEnvConfig {
    /// Feature dimension.
    pub d: usize,
    /// Actions per slate.
    pub k: usize,
    /// Number of tasks.
    pub m: usize,
    /// Hyper-prior scale: mu_star ~ N(0, sigma_q^2 I).
    pub sigma_q: f64,
    /// Task-prior scale: theta_s ~ N(mu_star, sigma_0^2 I).
    pub sigma_0: f64,
    /// Reward noise standard deviation.
    pub sigma: f64,
    /// Total logged interactions.
    pub n: usize,
    /// Monte Carlo slates per policy evaluation.
    pub n_eval: usize,
}

impl Default for SyntheticEnvConfig {
    fn default() -> Self {
        Self {
            d: 4,
            k: 5,
            m: 10,
            sigma_q: 0.5,
            sigma_0: 0.5,
            sigma: 0.5,
            n: 500,
            n_eval: 10_000,
        }
    }
}

impl SyntheticEnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.k == 0 || self.m == 0 {
            return Err(Error::invalid("env config", "d, K, and m must be positive"));
        }
        if self.n_eval == 0 {
            return Err(Error::invalid("env config", "n_eval must be positive"));
        }
        for (name, v) in [
            ("sigma_q", self.sigma_q),
            ("sigma_0", self.sigma_0),
            ("sigma", self.sigma),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be finite and > 0"));
            }
        }
        Ok(())
    }

    /// The model configuration handed to learners.
    pub fn model(&self) -> Result<HierModelConfig> {
        HierModelConfig::isotropic(self.d, self.sigma_q, self.sigma_0, self.sigma)
    }
}

/// How evaluation and logging slates are drawn.
#[derive(Debug, Clone, PartialEq)]
pub enum SlateSampler {
    /// Each of the K rows has i.i.d. Uniform[-0.5, 0.5] entries; rows longer
    /// than unit norm are rescaled onto the unit sphere (only possible for
    /// d > 4).
    UniformCube { k: usize, d: usize },
    /// Slates are K distinct rows of a fixed item-feature pool. `scale` is
    /// the global constant the pool rows were already multiplied by to
    /// enforce unit norms; it is carried for reporting only.
    ItemPool {
        items: DMatrix<f64>,
        k: usize,
        scale: f64,
    },
}

impl SlateSampler {
    pub fn k(&self) -> usize {
        match self {
            SlateSampler::UniformCube { k, .. } | SlateSampler::ItemPool { k, .. } => *k,
        }
    }

    pub fn d(&self) -> usize {
        match self {
            SlateSampler::UniformCube { d, .. } => *d,
            SlateSampler::ItemPool { items, .. } => items.ncols(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SlateSampler::UniformCube { k, d } => {
                if *k == 0 || *d == 0 {
                    return Err(Error::invalid("slate sampler", "K and d must be positive"));
                }
            }
            SlateSampler::ItemPool { items, k, scale } => {
                if *k == 0 || *k > items.nrows() {
                    return Err(Error::invalid(
                        "slate sampler",
                        format!("need 1 <= K <= {} items, got K = {k}", items.nrows()),
                    ));
                }
                if !(scale.is_finite() && *scale > 0.0) {
                    return Err(Error::invalid("slate sampler", "scale must be positive"));
                }
                for (j, row) in items.row_iter().enumerate() {
                    let norm = row.norm();
                    if norm > 1.0 + crate::model::FEATURE_NORM_TOL {
                        return Err(Error::FeatureNormExceeded { index: j, norm });
                    }
                }
            }
        }
        Ok(())
    }

    /// Draws one slate. Infallible for a validated sampler.
    pub fn sample(&self, rng: &mut ChaCha12Rng) -> ContextSlate {
        match self {
            SlateSampler::UniformCube { k, d } => {
                let mut features = DMatrix::zeros(*k, *d);
                for a in 0..*k {
                    for j in 0..*d {
                        features[(a, j)] = rng.random::<f64>() - 0.5;
                    }
                    let norm = features.row(a).norm();
                    if norm > 1.0 {
                        features.row_mut(a).scale_mut(1.0 / norm);
                    }
                }
                ContextSlate::new(features).expect("rows rescaled to unit norm")
            }
            SlateSampler::ItemPool { items, k, .. } => {
                let picked = rand::seq::index::sample(rng, items.nrows(), *k);
                let mut features = DMatrix::zeros(*k, items.ncols());
                for (row, j) in picked.into_iter().enumerate() {
                    features.row_mut(row).copy_from(&items.row(j));
                }
                ContextSlate::new(features).expect("pool rows validated at construction")
            }
        }
    }
}

/// Ground truth of a simulated multi-task problem plus the model config
/// learners are given. Only [`policy::fit_oracleopo`] may see `mu_star`.
#[derive(Debug, Clone)]
pub struct Environment {
    mu_star: DVector<f64>,
    thetas: Vec<DVector<f64>>,
    sampler: SlateSampler,
    /// Reward noise used when generating data. Kept separate from the model
    /// so noiseless generation (sigma = 0) stays possible even though the
    /// learner-side model requires sigma > 0.
    sigma: f64,
    model: HierModelConfig,
}

impl Environment {
    pub fn new(
        mu_star: DVector<f64>,
        thetas: Vec<DVector<f64>>,
        sampler: SlateSampler,
        sigma: f64,
        model: HierModelConfig,
    ) -> Result<Self> {
        sampler.validate()?;
        let d = model.d();
        if mu_star.len() != d {
            return Err(Error::DimensionMismatch {
                what: "mu_star vs model".to_string(),
                expected: d,
                actual: mu_star.len(),
            });
        }
        if thetas.is_empty() {
            return Err(Error::invalid("thetas", "environment needs at least one task"));
        }
        for (s, theta) in thetas.iter().enumerate() {
            if theta.len() != d {
                return Err(Error::DimensionMismatch {
                    what: format!("theta of task {s}"),
                    expected: d,
                    actual: theta.len(),
                });
            }
        }
        if sampler.d() != d {
            return Err(Error::DimensionMismatch {
                what: "slate sampler vs model".to_string(),
                expected: d,
                actual: sampler.d(),
            });
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::invalid("sigma", "must be finite and >= 0"));
        }
        Ok(Self {
            mu_star,
            thetas,
            sampler,
            sigma,
            model,
        })
    }

    pub fn m(&self) -> usize {
        self.thetas.len()
    }

    pub fn d(&self) -> usize {
        self.model.d()
    }

    pub fn k(&self) -> usize {
        self.sampler.k()
    }

    pub fn mu_star(&self) -> &DVector<f64> {
        &self.mu_star
    }

    pub fn theta(&self, task: usize) -> Result<&DVector<f64>> {
        self.thetas.get(task).ok_or(Error::TaskOutOfRange {
            index: 0,
            task_id: task + 1,
            m: self.thetas.len(),
        })
    }

    pub fn thetas(&self) -> &[DVector<f64>] {
        &self.thetas
    }

    pub fn sampler(&self) -> &SlateSampler {
        &self.sampler
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn model(&self) -> &HierModelConfig {
        &self.model
    }
}

fn standard_normal(rng: &mut ChaCha12Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Samples ground truth: mu_star ~ N(0, sigma_q^2 I), each task parameter
/// ~ N(mu_star, sigma_0^2 I), slates from the uniform cube.
pub fn sample_environment(
    config: &SyntheticEnvConfig,
    rng: &mut ChaCha12Rng,
) -> Result<Environment> {
    config.validate()?;
    let d = config.d;
    let mu_star =
        DVector::from_iterator(d, (0..d).map(|_| config.sigma_q * standard_normal(rng)));
    let thetas: Vec<DVector<f64>> = (0..config.m)
        .map(|_| {
            DVector::from_iterator(
                d,
                (0..d).map(|i| mu_star[i] + config.sigma_0 * standard_normal(rng)),
            )
        })
        .collect();
    Environment::new(
        mu_star,
        thetas,
        SlateSampler::UniformCube { k: config.k, d },
        config.sigma,
        config.model()?,
    )
}

/// Generates `n` logged interactions: task uniform over m, fresh slate,
/// action uniform over K, Gaussian reward around the true mean.
pub fn generate_log(env: &Environment, n: usize, rng: &mut ChaCha12Rng) -> Result<LoggedDataset> {
    let m = env.m();
    let k = env.k();
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let task = rng.random_range(0..m);
        let slate = env.sampler.sample(rng);
        let action = rng.random_range(0..k);
        let features = slate.action_features(action);
        let mean = features.dot(&env.thetas[task]);
        let reward = mean + env.sigma * standard_normal(rng);
        records.push(LoggedRecord {
            task,
            action,
            features,
            reward,
        });
    }
    LoggedDataset::new(m, env.d(), k, records)
}

/// Monte Carlo estimate of one policy's value gap on one task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvaluationResult {
    /// Estimated value of the optimal policy.
    pub value_opt: f64,
    /// Estimated value of the evaluated policy.
    pub value_learned: f64,
    /// `value_opt - value_learned`; nonnegative by pairing.
    pub suboptimality: f64,
    /// Standard error of the paired per-slate differences.
    pub mc_std_error: f64,
    /// Number of slates used.
    pub n_eval: usize,
}

fn optimal_action(slate: &ContextSlate, theta: &DVector<f64>) -> usize {
    let mut best = 0;
    let mut best_reward = f64::NEG_INFINITY;
    for a in 0..slate.k() {
        let r = slate.action_features(a).dot(theta);
        if r > best_reward {
            best = a;
            best_reward = r;
        }
    }
    best
}

/// Evaluates several policies on one task with common random slates: each
/// sampled slate is scored by the optimal policy and by every supplied
/// policy, so comparisons across policies share the Monte Carlo noise.
pub fn evaluate_policies(
    env: &Environment,
    policies: &[&LearnedPolicy],
    task: usize,
    n_eval: usize,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<EvaluationResult>> {
    if n_eval == 0 {
        return Err(Error::invalid("n_eval", "must be >= 1"));
    }
    let theta = env.theta(task)?.clone();
    for p in policies {
        if p.d() != env.d() {
            return Err(Error::DimensionMismatch {
                what: "policy vs environment".to_string(),
                expected: env.d(),
                actual: p.d(),
            });
        }
    }
    let mut opt_sum = 0.0;
    let mut learned_sum = vec![0.0; policies.len()];
    let mut diff_sum = vec![0.0; policies.len()];
    let mut diff_sq_sum = vec![0.0; policies.len()];
    for _ in 0..n_eval {
        let slate = env.sampler.sample(rng);
        let a_opt = optimal_action(&slate, &theta);
        let r_opt = slate.action_features(a_opt).dot(&theta);
        opt_sum += r_opt;
        for (i, p) in policies.iter().enumerate() {
            let a = p.act(task, &slate)?;
            let r = slate.action_features(a).dot(&theta);
            let diff = r_opt - r;
            learned_sum[i] += r;
            diff_sum[i] += diff;
            diff_sq_sum[i] += diff * diff;
        }
    }
    let n = n_eval as f64;
    let value_opt = opt_sum / n;
    Ok((0..policies.len())
        .map(|i| {
            let value_learned = learned_sum[i] / n;
            let mean_diff = diff_sum[i] / n;
            let mc_std_error = if n_eval > 1 {
                let var = (diff_sq_sum[i] - n * mean_diff * mean_diff) / (n - 1.0);
                (var.max(0.0) / n).sqrt()
            } else {
                0.0
            };
            EvaluationResult {
                value_opt,
                value_learned,
                suboptimality: value_opt - value_learned,
                mc_std_error,
                n_eval,
            }
        })
        .collect())
}

/// Evaluates one policy on one task. See [`evaluate_policies`].
pub fn evaluate_policy(
    env: &Environment,
    policy: &LearnedPolicy,
    task: usize,
    n_eval: usize,
    rng: &mut ChaCha12Rng,
) -> Result<EvaluationResult> {
    Ok(evaluate_policies(env, &[policy], task, n_eval, rng)?[0])
}

/// Monte Carlo estimate of the second moment of the optimal policy's chosen
/// features, `E[phi(X, opt(X)) phi(X, opt(X))^T]`, for one task. Also returns
/// the largest entry-wise standard error as an estimation-quality proxy.
pub fn estimate_gstar(
    env: &Environment,
    task: usize,
    n_eval: usize,
    rng: &mut ChaCha12Rng,
) -> Result<(DMatrix<f64>, f64)> {
    if n_eval == 0 {
        return Err(Error::invalid("n_eval", "must be >= 1"));
    }
    let theta = env.theta(task)?.clone();
    let d = env.d();
    let mut sum = DMatrix::<f64>::zeros(d, d);
    let mut sq_sum = DMatrix::<f64>::zeros(d, d);
    for _ in 0..n_eval {
        let slate = env.sampler.sample(rng);
        let phi = slate.action_features(optimal_action(&slate, &theta));
        for i in 0..d {
            for j in 0..d {
                let v = phi[i] * phi[j];
                sum[(i, j)] += v;
                sq_sum[(i, j)] += v * v;
            }
        }
    }
    let n = n_eval as f64;
    let mean = sum / n;
    let mut max_se: f64 = 0.0;
    if n_eval > 1 {
        for i in 0..d {
            for j in 0..d {
                let var = (sq_sum[(i, j)] - n * mean[(i, j)] * mean[(i, j)]) / (n - 1.0);
                max_se = max_se.max((var.max(0.0) / n).sqrt());
            }
        }
    }
    Ok((mean, max_se))
}

/// Per-run mean suboptimality of each learner, averaged over tasks.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub run: usize,
    /// One entry per learner, same order as the experiment's learner list.
    pub mean_suboptimality: Vec<f64>,
    /// Monte Carlo standard error of each mean, propagated across tasks.
    pub mc_se: Vec<f64>,
}

/// Aggregated experiment output.
#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub learners: Vec<LearnerKind>,
    pub runs: Vec<RunResult>,
    /// Mean over runs, per learner.
    pub mean: Vec<f64>,
    /// Standard error of the run means, per learner (0 for a single run).
    pub std_error: Vec<f64>,
}

impl ExperimentSummary {
    pub fn learner_index(&self, learner: LearnerKind) -> Option<usize> {
        self.learners.iter().position(|&l| l == learner)
    }
}

fn fit_learner(
    learner: LearnerKind,
    dataset: &LoggedDataset,
    env: &Environment,
    alpha: f64,
) -> Result<LearnedPolicy> {
    match learner {
        LearnerKind::Hier => policy::fit_hieropo(dataset, env.model(), alpha),
        LearnerKind::Flat => policy::fit_flatopo(dataset, env.model(), alpha),
        LearnerKind::Oracle => policy::fit_oracleopo(dataset, env.model(), alpha, env.mu_star()),
        LearnerKind::Single => Err(Error::invalid(
            "learner",
            "the single-task learner fits one task in isolation; use flat for the per-task baseline",
        )),
    }
}

/// Runs `n_runs` independent experiments with a caller-supplied environment
/// per run. Each run samples a fresh log, fits every learner on it, and
/// evaluates all tasks with common random slates. Runs execute in parallel;
/// every run derives its random streams from (seed, run index), so results
/// do not depend on the thread count.
pub fn run_experiment_with<F>(
    env_for_run: F,
    n: usize,
    n_eval: usize,
    learners: &[LearnerKind],
    alpha: f64,
    n_runs: usize,
    seed: u64,
) -> Result<ExperimentSummary>
where
    F: Fn(usize) -> Result<Environment> + Sync,
{
    if n_runs == 0 {
        return Err(Error::invalid("n_runs", "must be >= 1"));
    }
    if learners.is_empty() {
        return Err(Error::invalid("learners", "need at least one learner"));
    }
    let runs: Vec<RunResult> = (0..n_runs)
        .into_par_iter()
        .map(|run| -> Result<RunResult> {
            let env = env_for_run(run)?;
            let run_id = run as u64;
            let mut log_rng = rng::stream(seed, &[purpose::LOG, run_id]);
            let dataset = generate_log(&env, n, &mut log_rng)?;
            let policies = learners
                .iter()
                .map(|&l| fit_learner(l, &dataset, &env, alpha))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&LearnedPolicy> = policies.iter().collect();
            let mut totals = vec![0.0; learners.len()];
            let mut se_sq = vec![0.0; learners.len()];
            for task in 0..env.m() {
                let mut eval_rng = rng::stream(seed, &[purpose::EVAL, run_id, task as u64]);
                let results = evaluate_policies(&env, &refs, task, n_eval, &mut eval_rng)?;
                for (i, r) in results.iter().enumerate() {
                    totals[i] += r.suboptimality;
                    se_sq[i] += r.mc_std_error * r.mc_std_error;
                }
            }
            let m = env.m() as f64;
            Ok(RunResult {
                run,
                mean_suboptimality: totals.iter().map(|t| t / m).collect(),
                mc_se: se_sq.iter().map(|s| s.sqrt() / m).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n_f = n_runs as f64;
    let mut mean = vec![0.0; learners.len()];
    let mut std_error = vec![0.0; learners.len()];
    for (i, mu) in mean.iter_mut().enumerate() {
        *mu = runs.iter().map(|r| r.mean_suboptimality[i]).sum::<f64>() / n_f;
    }
    if n_runs > 1 {
        for (i, se) in std_error.iter_mut().enumerate() {
            let var = runs
                .iter()
                .map(|r| (r.mean_suboptimality[i] - mean[i]).powi(2))
                .sum::<f64>()
                / (n_f - 1.0);
            *se = (var / n_f).sqrt();
        }
    }
    Ok(ExperimentSummary {
        learners: learners.to_vec(),
        runs,
        mean,
        std_error,
    })
}

/// [`run_experiment_with`] over freshly sampled synthetic environments.
pub fn run_experiment(
    config: &SyntheticEnvConfig,
    learners: &[LearnerKind],
    alpha: f64,
    n_runs: usize,
    seed: u64,
) -> Result<ExperimentSummary> {
    config.validate()?;
    run_experiment_with(
        |run| {
            let mut env_rng = rng::stream(seed, &[purpose::ENV, run as u64]);
            sample_environment(config, &mut env_rng)
        },
        config.n,
        config.n_eval,
        learners,
        alpha,
        n_runs,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::TaskBelief;
    use approx::assert_relative_eq;

    fn small_config() -> SyntheticEnvConfig {
        SyntheticEnvConfig {
            d: 2,
            k: 3,
            m: 4,
            n: 50,
            n_eval: 200,
            ..SyntheticEnvConfig::default()
        }
    }

    #[test]
    fn sampled_environment_has_requested_shape() {
        let config = small_config();
        let mut rng = rng::stream(7, &[purpose::ENV, 0]);
        let env = sample_environment(&config, &mut rng).unwrap();
        assert_eq!(env.m(), 4);
        assert_eq!(env.d(), 2);
        assert_eq!(env.k(), 3);
        assert_eq!(env.mu_star().len(), 2);
    }

    #[test]
    fn same_stream_reproduces_environment() {
        let config = small_config();
        let mut a = rng::stream(11, &[purpose::ENV, 3]);
        let mut b = rng::stream(11, &[purpose::ENV, 3]);
        let e1 = sample_environment(&config, &mut a).unwrap();
        let e2 = sample_environment(&config, &mut b).unwrap();
        assert_eq!(e1.mu_star(), e2.mu_star());
        assert_eq!(e1.thetas(), e2.thetas());
    }

    #[test]
    fn task_parameter_noise_has_small_sample_mean() {
        // 1e5 draws of theta - mu_star at sigma_0 = 0.5, d = 4: the sample
        // mean's norm stays below 3 sigma_0 sqrt(d / 1e5) < 0.01 < 0.02.
        let config = SyntheticEnvConfig {
            m: 100_000,
            ..SyntheticEnvConfig::default()
        };
        let mut rng = rng::stream(5, &[purpose::ENV, 0]);
        let env = sample_environment(&config, &mut rng).unwrap();
        let mut mean = DVector::zeros(4);
        for theta in env.thetas() {
            mean += theta - env.mu_star();
        }
        mean /= config.m as f64;
        assert!(mean.norm() <= 0.02, "sample mean norm {}", mean.norm());
    }

    #[test]
    fn uniform_cube_slates_stay_in_range() {
        let sampler = SlateSampler::UniformCube { k: 5, d: 4 };
        let mut rng = rng::stream(1, &[purpose::EVAL, 0]);
        for _ in 0..100 {
            let slate = sampler.sample(&mut rng);
            assert_eq!(slate.k(), 5);
            assert_eq!(slate.d(), 4);
            for a in 0..slate.k() {
                let phi = slate.action_features(a);
                assert!(phi.norm() <= 1.0 + 1e-12);
                for v in phi.iter() {
                    assert!((-0.5..=0.5).contains(v));
                }
            }
        }
    }

    #[test]
    fn high_dimensional_rows_are_rescaled() {
        let sampler = SlateSampler::UniformCube { k: 2, d: 16 };
        let mut rng = rng::stream(2, &[purpose::EVAL, 0]);
        for _ in 0..50 {
            let slate = sampler.sample(&mut rng);
            for a in 0..slate.k() {
                assert!(slate.action_features(a).norm() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn item_pool_slates_use_distinct_pool_rows() {
        let items = DMatrix::from_row_slice(4, 1, &[0.1, 0.2, 0.3, 0.4]);
        let sampler = SlateSampler::ItemPool {
            items,
            k: 3,
            scale: 1.0,
        };
        let mut rng = rng::stream(3, &[purpose::EVAL, 0]);
        for _ in 0..50 {
            let slate = sampler.sample(&mut rng);
            let mut vals: Vec<f64> = (0..3).map(|a| slate.action_features(a)[0]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals.dedup();
            assert_eq!(vals.len(), 3, "slate reused a pool row");
        }
    }

    #[test]
    fn log_has_requested_size_and_balanced_tasks() {
        let config = SyntheticEnvConfig::default();
        for seed in 0..20 {
            let mut env_rng = rng::stream(seed, &[purpose::ENV, 0]);
            let env = sample_environment(&config, &mut env_rng).unwrap();
            let mut log_rng = rng::stream(seed, &[purpose::LOG, 0]);
            let dataset = generate_log(&env, 500, &mut log_rng).unwrap();
            assert_eq!(dataset.len(), 500);
            let mut counts = vec![0usize; config.m];
            for r in dataset.records() {
                counts[r.task] += 1;
            }
            for (s, c) in counts.iter().enumerate() {
                assert!(
                    (25..=75).contains(c),
                    "seed {seed}: task {s} has {c} records"
                );
            }
        }
    }

    #[test]
    fn empty_log_keeps_header_shape() {
        let config = small_config();
        let mut env_rng = rng::stream(9, &[purpose::ENV, 0]);
        let env = sample_environment(&config, &mut env_rng).unwrap();
        let mut log_rng = rng::stream(9, &[purpose::LOG, 0]);
        let dataset = generate_log(&env, 0, &mut log_rng).unwrap();
        assert!(dataset.is_empty());
        assert_eq!((dataset.m(), dataset.d(), dataset.k()), (4, 2, 3));
    }

    #[test]
    fn noiseless_log_has_exact_rewards() {
        let config = small_config();
        let mut env_rng = rng::stream(4, &[purpose::ENV, 0]);
        let base = sample_environment(&config, &mut env_rng).unwrap();
        let env = Environment::new(
            base.mu_star().clone(),
            base.thetas().to_vec(),
            base.sampler().clone(),
            0.0,
            base.model().clone(),
        )
        .unwrap();
        let mut log_rng = rng::stream(4, &[purpose::LOG, 0]);
        let dataset = generate_log(&env, 100, &mut log_rng).unwrap();
        for r in dataset.records() {
            let mean = r.features.dot(env.theta(r.task).unwrap());
            assert_eq!(r.reward, mean);
        }
    }

    fn true_parameter_policy(env: &Environment, alpha: f64) -> LearnedPolicy {
        let tasks = env
            .thetas()
            .iter()
            .map(|theta| TaskBelief {
                mean: theta.clone(),
                cov: DMatrix::zeros(env.d(), env.d()),
            })
            .collect();
        LearnedPolicy::from_parts(LearnerKind::Oracle, alpha, env.d(), tasks).unwrap()
    }

    #[test]
    fn optimal_policy_has_zero_suboptimality() {
        let config = small_config();
        let mut env_rng = rng::stream(21, &[purpose::ENV, 0]);
        let env = sample_environment(&config, &mut env_rng).unwrap();
        let policy = true_parameter_policy(&env, 0.0);
        let mut eval_rng = rng::stream(21, &[purpose::EVAL, 0, 0]);
        let result = evaluate_policy(&env, &policy, 0, 500, &mut eval_rng).unwrap();
        assert_eq!(result.suboptimality, 0.0);
        assert_eq!(result.mc_std_error, 0.0);
        assert_eq!(result.value_opt, result.value_learned);
    }

    #[test]
    fn single_action_slates_leave_no_choice() {
        let config = SyntheticEnvConfig {
            k: 1,
            ..small_config()
        };
        let mut env_rng = rng::stream(22, &[purpose::ENV, 0]);
        let env = sample_environment(&config, &mut env_rng).unwrap();
        // An arbitrary (wrong) belief still acts optimally when K = 1.
        let policy = LearnedPolicy::from_parts(
            LearnerKind::Flat,
            0.3,
            2,
            (0..env.m())
                .map(|_| TaskBelief {
                    mean: DVector::from_vec(vec![5.0, -5.0]),
                    cov: DMatrix::identity(2, 2),
                })
                .collect(),
        )
        .unwrap();
        let mut eval_rng = rng::stream(22, &[purpose::EVAL, 0, 1]);
        let result = evaluate_policy(&env, &policy, 1, 300, &mut eval_rng).unwrap();
        assert_eq!(result.suboptimality, 0.0);
    }

    #[test]
    fn paired_evaluation_is_nonnegative() {
        let config = small_config();
        for seed in 0..5 {
            let mut env_rng = rng::stream(seed, &[purpose::ENV, 0]);
            let env = sample_environment(&config, &mut env_rng).unwrap();
            let mut log_rng = rng::stream(seed, &[purpose::LOG, 0]);
            let dataset = generate_log(&env, 30, &mut log_rng).unwrap();
            let policy = policy::fit_hieropo(&dataset, env.model(), 0.1).unwrap();
            for task in 0..env.m() {
                let mut eval_rng = rng::stream(seed, &[purpose::EVAL, 0, task as u64]);
                let r = evaluate_policy(&env, &policy, task, 200, &mut eval_rng).unwrap();
                assert!(r.suboptimality >= 0.0);
                assert_relative_eq!(
                    r.suboptimality,
                    r.value_opt - r.value_learned,
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn gstar_estimate_is_symmetric_psd_and_stable() {
        let config = small_config();
        let mut env_rng = rng::stream(31, &[purpose::ENV, 0]);
        let env = sample_environment(&config, &mut env_rng).unwrap();
        let mut a = rng::stream(31, &[purpose::GSTAR, 0]);
        let (g1, se) = estimate_gstar(&env, 0, 2000, &mut a).unwrap();
        let mut b = rng::stream(31, &[purpose::GSTAR, 0]);
        let (g2, _) = estimate_gstar(&env, 0, 2000, &mut b).unwrap();
        assert_eq!(g1, g2);
        assert!(se > 0.0);
        assert_eq!(g1, g1.transpose());
        assert!(crate::linalg::min_eigenvalue(&g1) >= -1e-12);
    }

    #[test]
    fn experiment_summary_shape_and_determinism() {
        let config = SyntheticEnvConfig {
            n: 40,
            n_eval: 100,
            ..small_config()
        };
        let learners = [LearnerKind::Oracle, LearnerKind::Hier, LearnerKind::Flat];
        let s1 = run_experiment(&config, &learners, 0.1, 3, 77).unwrap();
        let s2 = run_experiment(&config, &learners, 0.1, 3, 77).unwrap();
        assert_eq!(s1.runs.len(), 3);
        assert_eq!(s1.mean.len(), 3);
        for (a, b) in s1.runs.iter().zip(&s2.runs) {
            assert_eq!(a.mean_suboptimality, b.mean_suboptimality);
        }
        assert_eq!(s1.mean, s2.mean);
        assert_eq!(s1.std_error, s2.std_error);
        for se in &s1.std_error {
            assert!(*se >= 0.0);
        }
    }

    #[test]
    fn single_run_reports_zero_std_error() {
        let config = SyntheticEnvConfig {
            n: 20,
            n_eval: 50,
            ..small_config()
        };
        let summary = run_experiment(&config, &[LearnerKind::Hier], 0.1, 1, 5).unwrap();
        assert_eq!(summary.std_error, vec![0.0]);
    }

    #[test]
    fn experiment_rejects_single_task_learner() {
        let config = small_config();
        assert!(run_experiment(&config, &[LearnerKind::Single], 0.1, 1, 5).is_err());
    }
}
