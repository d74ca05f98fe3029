//! Command-line front end: data generation, policy fitting, evaluation,
//! sweeps, bound reports, and ratings preparation.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hieropo::bounds::{self, BoundReport, BoundVariant};
use hieropo::config::ExperimentConfig;
use hieropo::envsim;
use hieropo::error::{Error, Result, StageExt};
use hieropo::io;
use hieropo::policy::{self, LearnerKind};
use hieropo::posterior;
use hieropo::recsys;
use hieropo::rng::{self, purpose};

pub const BOUNDS_CSV_SCHEMA: &str = "hieropo.bounds.v1";

#[derive(Parser)]
#[command(
    name = "hieropo",
    version,
    about = "Pessimistic off-policy optimization for multi-task linear bandits \
             with a hierarchical Gaussian prior"
)]
struct Cli {
    /// Flat `key = value` configuration file; defaults cover every key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root random seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 1 guarantees byte-identical outputs, the default
    /// uses all cores (values are identical either way).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory (overrides the config file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Extra `key=value` config overrides, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DatasetFormat {
    Jsonl,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic environment, log uniform-random interactions, and
    /// write the dataset plus the simulator-only ground truth.
    Generate {
        /// Dataset output path (default: <out_dir>/dataset.<format>).
        #[arg(long)]
        dataset_out: Option<PathBuf>,
        /// Environment output path (default: <out_dir>/env.json).
        #[arg(long)]
        env_out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = DatasetFormat::Jsonl)]
        format: DatasetFormat,
    },

    /// Fit a pessimistic policy on a logged dataset.
    Fit {
        /// Logged dataset (.jsonl or .csv).
        #[arg(long)]
        dataset: PathBuf,
        /// Learner: hier, flat, oracle, or single.
        #[arg(long)]
        learner: String,
        /// Environment file; supplies the model configuration and, for the
        /// oracle learner, the ground-truth shared parameter.
        #[arg(long)]
        env: Option<PathBuf>,
        /// Policy output path (default: <out_dir>/policy_<learner>.json).
        #[arg(long)]
        policy_out: Option<PathBuf>,
    },

    /// Evaluate an exported policy against a simulator environment.
    Evaluate {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        env: PathBuf,
        /// Results output path (default: <out_dir>/evaluation.csv).
        #[arg(long)]
        results_out: Option<PathBuf>,
    },

    /// Run the configured sweep (axis x learners x runs) and emit run-level
    /// and aggregate CSVs.
    Sweep,

    /// Compute per-task suboptimality bound reports and assumption checks.
    Bounds {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        env: PathBuf,
        /// Force the coverage constant instead of estimating it.
        #[arg(long)]
        gamma: Option<f64>,
    },

    /// Factorize a ratings file, cluster user factors, estimate model
    /// parameters, and build a simulatable environment.
    RecsysPrep {
        /// Ratings file: `user::item::rating` lines or CSV.
        #[arg(long)]
        ratings: PathBuf,
    },

    /// Print the effective configuration in config-file syntax.
    ShowConfig,
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    for kv in &cli.set {
        let Some((key, value)) = kv.split_once('=') else {
            return Err(Error::invalid(
                "--set",
                format!("expected KEY=VALUE, got '{kv}'"),
            ));
        };
        config.apply_kv(key.trim(), value.trim())?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn ensure_out_dir(config: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&config.out_dir).map_err(|e| io_error(&config.out_dir, e))
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        let mut source = std::error::Error::source(&e);
        while let Some(s) = source {
            eprintln!("  caused by: {s}");
            source = s.source();
        }
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::invalid("--threads", e.to_string()))?;
    }
    let config = load_config(&cli)?;
    match &cli.command {
        Command::Generate {
            dataset_out,
            env_out,
            format,
        } => cmd_generate(&config, dataset_out.as_deref(), env_out.as_deref(), *format),
        Command::Fit {
            dataset,
            learner,
            env,
            policy_out,
        } => cmd_fit(&config, dataset, learner, env.as_deref(), policy_out.as_deref()),
        Command::Evaluate {
            policy,
            env,
            results_out,
        } => cmd_evaluate(&config, policy, env, results_out.as_deref()),
        Command::Sweep => cmd_sweep(&config),
        Command::Bounds {
            dataset,
            env,
            gamma,
        } => cmd_bounds(&config, dataset, env, *gamma),
        Command::RecsysPrep { ratings } => cmd_recsys_prep(&config, ratings),
        Command::ShowConfig => {
            print!("{}", config.show());
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

fn cmd_generate(
    config: &ExperimentConfig,
    dataset_out: Option<&Path>,
    env_out: Option<&Path>,
    format: DatasetFormat,
) -> Result<()> {
    ensure_out_dir(config)?;
    let mut env_rng = rng::stream(config.seed, &[purpose::ENV, 0]);
    let env = envsim::sample_environment(&config.env, &mut env_rng).stage("generate")?;
    let mut log_rng = rng::stream(config.seed, &[purpose::LOG, 0]);
    let dataset = envsim::generate_log(&env, config.env.n, &mut log_rng).stage("generate")?;

    let default_name = match format {
        DatasetFormat::Jsonl => "dataset.jsonl",
        DatasetFormat::Csv => "dataset.csv",
    };
    let dataset_path = dataset_out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.out_dir.join(default_name));
    match format {
        DatasetFormat::Jsonl => io::write_dataset_jsonl(&dataset_path, &dataset),
        DatasetFormat::Csv => io::write_dataset_csv(&dataset_path, &dataset),
    }
    .stage("generate")?;

    let env_path = env_out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.out_dir.join("env.json"));
    io::write_environment_json(&env_path, &env).stage("generate")?;

    println!(
        "generated {} records over {} tasks (d = {}, K = {})",
        dataset.len(),
        env.m(),
        env.d(),
        env.k()
    );
    println!("dataset: {}", dataset_path.display());
    println!("environment (simulator-only): {}", env_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

fn cmd_fit(
    config: &ExperimentConfig,
    dataset_path: &Path,
    learner: &str,
    env_path: Option<&Path>,
    policy_out: Option<&Path>,
) -> Result<()> {
    ensure_out_dir(config)?;
    let learner = LearnerKind::parse(learner)?;
    let dataset = io::read_dataset_auto(dataset_path).stage("fit")?;
    let env = env_path
        .map(io::read_environment_json)
        .transpose()
        .stage("fit")?;
    let model = match &env {
        Some(env) => env.model().clone(),
        None => config.env.model()?,
    };

    let policy = match learner {
        LearnerKind::Hier => policy::fit_hieropo(&dataset, &model, config.alpha),
        LearnerKind::Flat => policy::fit_flatopo(&dataset, &model, config.alpha),
        LearnerKind::Oracle => {
            let env = env.as_ref().ok_or(Error::MissingGroundTruth {
                learner: "oracle".to_string(),
            })?;
            policy::fit_oracleopo(&dataset, &model, config.alpha, env.mu_star())
        }
        LearnerKind::Single => {
            // The standalone baseline sees one task under the collapsed
            // prior: no information flows across tasks.
            let prior_cov = model.sigma_q() + model.sigma_0();
            policy::fit_single_task(&dataset, model.mu_q(), &prior_cov, model.sigma(), config.alpha)
        }
    }
    .stage("fit")?;

    let out = policy_out.map(Path::to_path_buf).unwrap_or_else(|| {
        config
            .out_dir
            .join(format!("policy_{}.json", learner.tag()))
    });
    io::write_policy_json(&out, &policy).stage("fit")?;
    println!(
        "fitted {} policy on {} records across {} tasks",
        learner.tag(),
        dataset.len(),
        policy.m()
    );
    println!("policy: {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

fn check_match(what: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            what: what.to_string(),
            expected,
            actual,
        });
    }
    Ok(())
}

fn cmd_evaluate(
    config: &ExperimentConfig,
    policy_path: &Path,
    env_path: &Path,
    results_out: Option<&Path>,
) -> Result<()> {
    ensure_out_dir(config)?;
    let policy = io::read_policy_json(policy_path).stage("evaluate")?;
    let env = io::read_environment_json(env_path).stage("evaluate")?;
    check_match("policy vs environment feature dimension", env.d(), policy.d())
        .stage("evaluate")?;
    check_match("policy vs environment task count", env.m(), policy.m()).stage("evaluate")?;

    let n_eval = config.env.n_eval;
    let mut rows = Vec::with_capacity(env.m() + 1);
    let mut sum_opt = 0.0;
    let mut sum_learned = 0.0;
    let mut sum_gap = 0.0;
    let mut se_sq = 0.0;
    for task in 0..env.m() {
        let mut eval_rng = rng::stream(config.seed, &[purpose::EVAL, 0, task as u64]);
        let r = envsim::evaluate_policy(&env, &policy, task, n_eval, &mut eval_rng)
            .stage("evaluate")?;
        sum_opt += r.value_opt;
        sum_learned += r.value_learned;
        sum_gap += r.suboptimality;
        se_sq += r.mc_std_error * r.mc_std_error;
        rows.push(io::EvaluationRow {
            task_id: (task + 1).to_string(),
            learner: policy.learner().tag().to_string(),
            value_opt: r.value_opt,
            value_learned: r.value_learned,
            suboptimality: r.suboptimality,
            mc_std_error: r.mc_std_error,
            n_eval,
        });
    }
    let m = env.m() as f64;
    let aggregate_se = se_sq.sqrt() / m;
    rows.push(io::EvaluationRow {
        task_id: "aggregate".to_string(),
        learner: policy.learner().tag().to_string(),
        value_opt: sum_opt / m,
        value_learned: sum_learned / m,
        suboptimality: sum_gap / m,
        mc_std_error: aggregate_se,
        n_eval,
    });

    let out = results_out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.out_dir.join("evaluation.csv"));
    io::write_csv_rows(&out, io::EVALUATION_CSV_SCHEMA, &rows).stage("evaluate")?;
    println!(
        "{}: mean suboptimality {:.6} +/- {:.6} over {} tasks ({} slates each)",
        policy.learner().tag(),
        sum_gap / m,
        aggregate_se,
        env.m(),
        n_eval
    );
    println!("results: {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

fn cmd_sweep(config: &ExperimentConfig) -> Result<()> {
    ensure_out_dir(config)?;
    let mut run_rows = Vec::new();
    let mut aggregate_rows = Vec::new();
    for &value in &config.sweep_values {
        let env_config = config.env_at(value);
        let summary = envsim::run_experiment(
            &env_config,
            &config.learners,
            config.alpha,
            config.n_runs,
            config.seed,
        )
        .stage("sweep")?;
        for run in &summary.runs {
            for (i, learner) in summary.learners.iter().enumerate() {
                run_rows.push(io::RunRow {
                    learner: learner.tag().to_string(),
                    n: env_config.n,
                    m: env_config.m,
                    sigma_q: env_config.sigma_q,
                    run_id: run.run,
                    mean_suboptimality: run.mean_suboptimality[i],
                    se: run.mc_se[i],
                });
            }
        }
        let mut line = format!("{} = {value}:", config.sweep_axis.tag());
        for (i, learner) in summary.learners.iter().enumerate() {
            aggregate_rows.push(io::AggregateRow {
                learner: learner.tag().to_string(),
                n: env_config.n,
                m: env_config.m,
                sigma_q: env_config.sigma_q,
                n_runs: config.n_runs,
                mean_suboptimality: summary.mean[i],
                se: summary.std_error[i],
            });
            line.push_str(&format!(
                "  {} {:.6} +/- {:.6}",
                learner.tag(),
                summary.mean[i],
                summary.std_error[i]
            ));
        }
        println!("{line}");
    }

    let runs_path = config.out_dir.join("runs.csv");
    let aggregate_path = config.out_dir.join("aggregate.csv");
    io::write_csv_rows(&runs_path, io::RUN_CSV_SCHEMA, &run_rows).stage("sweep")?;
    io::write_csv_rows(&aggregate_path, io::AGGREGATE_CSV_SCHEMA, &aggregate_rows)
        .stage("sweep")?;
    println!("run-level rows: {}", runs_path.display());
    println!("aggregate rows: {}", aggregate_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// bounds
// ---------------------------------------------------------------------------

/// `Some` only for finite values; JSON cannot represent infinity directly.
fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Serialize)]
struct BoundReportDto {
    epsilon_task: f64,
    /// Absent when the term is infinite (vacuous bound).
    epsilon_hyper: Option<f64>,
    epsilon_total: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    diagnostic: Option<String>,
}

impl From<&BoundReport> for BoundReportDto {
    fn from(r: &BoundReport) -> Self {
        Self {
            epsilon_task: r.epsilon_task,
            epsilon_hyper: finite(r.epsilon_hyper),
            epsilon_total: finite(r.epsilon_total),
            diagnostic: r.diagnostic.clone(),
        }
    }
}

#[derive(Serialize)]
struct TaskBoundsDto {
    task_id: usize,
    n_task: usize,
    general: BoundReportDto,
    diagonal: BoundReportDto,
    /// Single-task bound of the flat baseline under the collapsed prior.
    flat_epsilon: f64,
}

#[derive(Serialize)]
struct GammaDto {
    /// Value the bounds were evaluated with.
    used: f64,
    /// "estimated" or "forced".
    source: String,
    estimate: Option<f64>,
    per_task: Vec<Option<f64>>,
    certificate_min_eig: Option<f64>,
    gstar_max_std_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

#[derive(Serialize)]
struct InputsDto {
    d: usize,
    sigma: f64,
    delta: f64,
    counts: Vec<usize>,
    lambda_min_prec_0: f64,
    lambda_min_prec_q: f64,
    lambda_max_cov_0: f64,
    lambda_min_prec_flat: f64,
    gstar_inv_max_eig: Vec<Option<f64>>,
}

#[derive(Serialize)]
struct NormsDto {
    ok: bool,
    max_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    worst_record: Option<usize>,
}

#[derive(Serialize)]
struct StructureDto {
    ok: bool,
    features_one_sparse: bool,
    sigma_q_diagonal: bool,
    sigma_0_diagonal: bool,
}

#[derive(Serialize)]
struct AssumptionsDto {
    norms: NormsDto,
    structure: StructureDto,
}

#[derive(Serialize)]
struct BoundsFile {
    schema: String,
    alpha: f64,
    delta: f64,
    gamma: GammaDto,
    inputs: InputsDto,
    per_task: Vec<TaskBoundsDto>,
    assumptions: AssumptionsDto,
}

#[derive(Serialize)]
struct BoundRow {
    task_id: usize,
    variant: String,
    n_task: usize,
    epsilon_task: f64,
    /// Formatted, so "inf" survives the trip through CSV.
    epsilon_hyper: String,
    epsilon_total: String,
}

fn cmd_bounds(
    config: &ExperimentConfig,
    dataset_path: &Path,
    env_path: &Path,
    forced_gamma: Option<f64>,
) -> Result<()> {
    ensure_out_dir(config)?;
    let dataset = io::read_dataset_auto(dataset_path).stage("bounds")?;
    let env = io::read_environment_json(env_path).stage("bounds")?;
    check_match("dataset vs environment feature dimension", env.d(), dataset.d())
        .stage("bounds")?;
    check_match("dataset vs environment task count", env.m(), dataset.m()).stage("bounds")?;

    let model = env.model();
    let stats = posterior::compute_task_statistics(&dataset, model).stage("bounds")?;
    let counts: Vec<usize> = stats.iter().map(|s| s.count).collect();

    let assumptions =
        bounds::check_assumptions(dataset.records(), model, Some(&env), config.env.n_eval, config.seed)
            .stage("bounds")?;
    let estimate = assumptions
        .coverage
        .as_ref()
        .expect("coverage is estimated whenever an environment is supplied");

    let mut note = None;
    let (gamma_used, source) = match forced_gamma {
        Some(g) => (g, "forced"),
        None if estimate.gamma.is_finite() => (estimate.gamma, "estimated"),
        None => {
            // Every optimal-feature second moment was numerically zero, so
            // no direction constrains gamma; claim no coverage rather than
            // perfect coverage.
            note = Some(
                "coverage was unconstrained (all optimal-feature mass is zero); \
                 bounds evaluated at gamma = 0"
                    .to_string(),
            );
            (0.0, "estimated")
        }
    };

    let inputs = bounds::BoundInputs::from_model(
        model,
        counts.clone(),
        gamma_used,
        config.delta,
        Some(&estimate.gstars),
    )
    .stage("bounds")?;
    let alpha = bounds::alpha_schedule(inputs.d, inputs.delta).stage("bounds")?;

    let mut per_task = Vec::with_capacity(counts.len());
    let mut csv_rows = Vec::new();
    for task in 0..counts.len() {
        let general = bounds::multi_task_bound(&inputs, task, BoundVariant::General)
            .stage("bounds")?;
        let diagonal = bounds::multi_task_bound(&inputs, task, BoundVariant::Diagonal)
            .stage("bounds")?;
        let flat_epsilon = bounds::flatopo_bound(&inputs, counts[task]).stage("bounds")?;
        for (variant, report) in [("general", &general), ("diagonal", &diagonal)] {
            csv_rows.push(BoundRow {
                task_id: task + 1,
                variant: variant.to_string(),
                n_task: counts[task],
                epsilon_task: report.epsilon_task,
                epsilon_hyper: format!("{}", report.epsilon_hyper),
                epsilon_total: format!("{}", report.epsilon_total),
            });
        }
        csv_rows.push(BoundRow {
            task_id: task + 1,
            variant: "flat".to_string(),
            n_task: counts[task],
            epsilon_task: flat_epsilon,
            epsilon_hyper: "0".to_string(),
            epsilon_total: format!("{flat_epsilon}"),
        });
        per_task.push(TaskBoundsDto {
            task_id: task + 1,
            n_task: counts[task],
            general: BoundReportDto::from(&general),
            diagonal: BoundReportDto::from(&diagonal),
            flat_epsilon,
        });
    }

    let file = BoundsFile {
        schema: "hieropo.bounds.v1".to_string(),
        alpha,
        delta: config.delta,
        gamma: GammaDto {
            used: gamma_used,
            source: source.to_string(),
            estimate: finite(estimate.gamma),
            per_task: estimate.per_task.iter().map(|&g| finite(g)).collect(),
            certificate_min_eig: finite(estimate.certificate_min_eig),
            gstar_max_std_error: estimate.gstar_max_std_error,
            note,
        },
        inputs: InputsDto {
            d: inputs.d,
            sigma: inputs.sigma,
            delta: inputs.delta,
            counts: inputs.counts.clone(),
            lambda_min_prec_0: inputs.lambda_min_prec_0,
            lambda_min_prec_q: inputs.lambda_min_prec_q,
            lambda_max_cov_0: inputs.lambda_max_cov_0,
            lambda_min_prec_flat: inputs.lambda_min_prec_flat,
            gstar_inv_max_eig: inputs
                .gstar_inv_max_eig
                .as_ref()
                .map(|eigs| eigs.iter().map(|&v| finite(v)).collect())
                .unwrap_or_default(),
        },
        per_task,
        assumptions: AssumptionsDto {
            norms: NormsDto {
                ok: assumptions.norms.ok,
                max_norm: assumptions.norms.max_norm,
                worst_record: assumptions.norms.worst_index.map(|i| i + 1),
            },
            structure: StructureDto {
                ok: assumptions.structure.ok,
                features_one_sparse: assumptions.structure.features_one_sparse,
                sigma_q_diagonal: assumptions.structure.sigma_q_diagonal,
                sigma_0_diagonal: assumptions.structure.sigma_0_diagonal,
            },
        },
    };

    let json_path = config.out_dir.join("bounds.json");
    let csv_path = config.out_dir.join("bounds.csv");
    io::write_json(&json_path, &file).stage("bounds")?;
    io::write_csv_rows(&csv_path, BOUNDS_CSV_SCHEMA, &csv_rows).stage("bounds")?;
    println!(
        "gamma = {gamma_used} ({source}); alpha = {alpha:.6}; {} tasks",
        counts.len()
    );
    println!("report: {}", json_path.display());
    println!("rows: {}", csv_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// recsys-prep
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct FactorizationFile {
    schema: String,
    rank: usize,
    lambda_reg: f64,
    n_users: usize,
    n_items: usize,
    rmse_trace: Vec<f64>,
    objective_trace: Vec<f64>,
    user_factors: Vec<Vec<f64>>,
    item_factors: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct ParamsFile {
    schema: String,
    d: usize,
    mu_q: Vec<f64>,
    /// Row-major d*d.
    sigma_q: Vec<f64>,
    mu_star: Vec<f64>,
    /// Row-major d*d.
    sigma_0: Vec<f64>,
    sigma: f64,
    sigma_raw: f64,
    chosen_cluster_index: usize,
    cluster_size: usize,
    raw_sigma_q_eigenvalues: Vec<f64>,
    raw_sigma_0_eigenvalues: Vec<f64>,
}

fn matrix_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().cloned().collect())
        .collect()
}

fn row_major(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn cmd_recsys_prep(config: &ExperimentConfig, ratings_path: &Path) -> Result<()> {
    ensure_out_dir(config)?;
    let r = &config.recsys;
    let ratings = io::read_ratings(ratings_path).stage("ratings")?;
    println!(
        "ratings: {} entries, {} users, {} items",
        ratings.len(),
        ratings.n_users(),
        ratings.n_items()
    );

    let factorization =
        recsys::als_factorize(&ratings, r.rank, r.lambda_reg, r.sweeps, config.seed)
            .stage("als")?;
    println!(
        "factorized at rank {} (final RMSE {:.6})",
        r.rank,
        factorization.rmse_trace.last().copied().unwrap_or(f64::NAN)
    );

    let gmm = recsys::gmm_fit(
        &factorization.u,
        r.clusters,
        r.gmm_iters,
        r.gmm_tol,
        config.seed,
    )
    .stage("gmm")?;
    let params = recsys::estimate_hier_params(&factorization, &gmm, &ratings)
        .stage("estimate")?;
    println!(
        "clustered into {} components; chose cluster {} with {} users (sigma = {:.6})",
        r.clusters,
        params.chosen_cluster + 1,
        params.cluster_users.len(),
        params.sigma
    );

    let env = recsys::build_recsys_environment(
        &params,
        &factorization,
        r.slate,
        r.m,
        config.seed,
    )
    .stage("environment")?;

    let fac_path = config.out_dir.join("factorization.json");
    io::write_json(
        &fac_path,
        &FactorizationFile {
            schema: "hieropo.factorization.v1".to_string(),
            rank: factorization.rank,
            lambda_reg: factorization.lambda_reg,
            n_users: ratings.n_users(),
            n_items: ratings.n_items(),
            rmse_trace: factorization.rmse_trace.clone(),
            objective_trace: factorization.objective_trace.clone(),
            user_factors: matrix_rows(&factorization.u),
            item_factors: matrix_rows(&factorization.v),
        },
    )
    .stage("environment")?;

    let params_path = config.out_dir.join("recsys_params.json");
    io::write_json(
        &params_path,
        &ParamsFile {
            schema: "hieropo.params.v1".to_string(),
            d: r.rank,
            mu_q: params.mu_q.iter().cloned().collect(),
            sigma_q: row_major(&params.sigma_q),
            mu_star: params.mu_star.iter().cloned().collect(),
            sigma_0: row_major(&params.sigma_0),
            sigma: params.sigma,
            sigma_raw: params.sigma_raw,
            chosen_cluster_index: params.chosen_cluster,
            cluster_size: params.cluster_users.len(),
            raw_sigma_q_eigenvalues: params.raw_sigma_q_eigenvalues.clone(),
            raw_sigma_0_eigenvalues: params.raw_sigma_0_eigenvalues.clone(),
        },
    )
    .stage("environment")?;

    let env_path = config.out_dir.join("recsys_env.json");
    io::write_environment_json(&env_path, &env).stage("environment")?;
    println!(
        "environment: {} tasks, {}-item slates from a {}-item pool",
        env.m(),
        env.k(),
        factorization.v.nrows()
    );
    println!("factorization: {}", fac_path.display());
    println!("parameters: {}", params_path.display());
    println!("environment: {}", env_path.display());
    Ok(())
}
