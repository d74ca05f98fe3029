//! End-to-end checks of the command-line binary: golden outputs, error
//! reporting, determinism, and file plumbing.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use hieropo::io;
use hieropo::policy::LearnerKind;
use tempfile::tempdir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hieropo"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_err(cmd: &mut Command) -> String {
    let out = cmd.output().expect("binary runs");
    assert!(
        !out.status.success(),
        "command unexpectedly succeeded\nstdout: {}",
        String::from_utf8_lossy(&out.stdout)
    );
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// The scalar running example: unit hyper-prior, unit task prior, unit
/// noise, one observation of 2 at feature 1.
fn write_scalar_dataset(path: &Path) {
    std::fs::write(
        path,
        "{\"m\":1,\"d\":1,\"K\":1}\n\
         {\"task_id\":1,\"action\":1,\"features\":[1.0],\"reward\":2.0}\n",
    )
    .unwrap();
}

fn scalar_config_args(cmd: &mut Command) -> &mut Command {
    for kv in [
        "d=1", "K=1", "m=1", "sigma_q=1", "sigma_0=1", "sigma=1", "n=1",
    ] {
        cmd.arg("--set").arg(kv);
    }
    cmd
}

#[test]
fn fit_hier_reproduces_the_scalar_golden_values() {
    let dir = tempdir().unwrap();
    let dataset = dir.path().join("scalar.jsonl");
    write_scalar_dataset(&dataset);
    let policy_path = dir.path().join("policy.json");

    let mut cmd = bin();
    scalar_config_args(&mut cmd)
        .arg("--out")
        .arg(dir.path())
        .arg("fit")
        .arg("--dataset")
        .arg(&dataset)
        .arg("--learner")
        .arg("hier")
        .arg("--policy-out")
        .arg(&policy_path);
    run_ok(&mut cmd);

    let policy = io::read_policy_json(&policy_path).unwrap();
    assert_eq!(policy.learner(), LearnerKind::Hier);
    let belief = policy.task(0).unwrap();
    assert!((belief.mean[0] - 4.0 / 3.0).abs() < 1e-12);
    assert!((belief.cov[(0, 0)] - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn fit_flat_equals_hier_for_one_task() {
    let dir = tempdir().unwrap();
    let dataset = dir.path().join("scalar.jsonl");
    write_scalar_dataset(&dataset);

    for learner in ["hier", "flat"] {
        let mut cmd = bin();
        scalar_config_args(&mut cmd)
            .arg("--out")
            .arg(dir.path())
            .arg("fit")
            .arg("--dataset")
            .arg(&dataset)
            .arg("--learner")
            .arg(learner);
        run_ok(&mut cmd);
    }
    let hier = io::read_policy_json(&dir.path().join("policy_hier.json")).unwrap();
    let flat = io::read_policy_json(&dir.path().join("policy_flat.json")).unwrap();
    let (h, f) = (hier.task(0).unwrap(), flat.task(0).unwrap());
    assert!((h.mean[0] - f.mean[0]).abs() < 1e-10);
    assert!((h.cov[(0, 0)] - f.cov[(0, 0)]).abs() < 1e-10);
}

#[test]
fn malformed_dataset_line_is_reported_with_its_number() {
    let dir = tempdir().unwrap();
    let dataset = dir.path().join("bad.jsonl");
    std::fs::write(
        &dataset,
        "{\"m\":1,\"d\":1,\"K\":1}\n\
         {\"task_id\":1,\"action\":1,\"features\":[0.5],\"reward\":1.0}\n\
         {\"task_id\":1,\"action\":1,\"features\":[0.5],\"reward\":broken}\n",
    )
    .unwrap();

    let mut cmd = bin();
    scalar_config_args(&mut cmd)
        .arg("--out")
        .arg(dir.path())
        .arg("fit")
        .arg("--dataset")
        .arg(&dataset)
        .arg("--learner")
        .arg("hier");
    let stderr = run_err(&mut cmd);
    assert!(stderr.contains(":3:"), "stderr was: {stderr}");
}

#[test]
fn oracle_without_ground_truth_is_refused() {
    let dir = tempdir().unwrap();
    let dataset = dir.path().join("scalar.jsonl");
    write_scalar_dataset(&dataset);

    let mut cmd = bin();
    scalar_config_args(&mut cmd)
        .arg("--out")
        .arg(dir.path())
        .arg("fit")
        .arg("--dataset")
        .arg(&dataset)
        .arg("--learner")
        .arg("oracle");
    let stderr = run_err(&mut cmd);
    assert!(stderr.contains("ground truth"), "stderr was: {stderr}");
}

#[test]
fn evaluate_rejects_mismatched_dimensions_naming_both() {
    let dir = tempdir().unwrap();
    // A d=2 environment via generate.
    let mut gen = bin();
    gen.arg("--seed")
        .arg("3")
        .arg("--out")
        .arg(dir.path())
        .arg("--set")
        .arg("d=2")
        .arg("--set")
        .arg("n=20")
        .arg("--set")
        .arg("n_eval=100")
        .arg("generate");
    run_ok(&mut gen);

    // A d=1 policy from the scalar example.
    let dataset = dir.path().join("scalar.jsonl");
    write_scalar_dataset(&dataset);
    let mut fit = bin();
    scalar_config_args(&mut fit)
        .arg("--out")
        .arg(dir.path())
        .arg("fit")
        .arg("--dataset")
        .arg(&dataset)
        .arg("--learner")
        .arg("hier");
    run_ok(&mut fit);

    let mut eval = bin();
    eval.arg("--out")
        .arg(dir.path())
        .arg("evaluate")
        .arg("--policy")
        .arg(dir.path().join("policy_hier.json"))
        .arg("--env")
        .arg(dir.path().join("env.json"));
    let stderr = run_err(&mut eval);
    assert!(
        stderr.contains("expected 2") && stderr.contains("got 1"),
        "stderr was: {stderr}"
    );
}

#[test]
fn evaluating_the_optimal_policy_gives_zero_suboptimality() {
    let dir = tempdir().unwrap();
    let mut gen = bin();
    gen.arg("--seed")
        .arg("11")
        .arg("--out")
        .arg(dir.path())
        .arg("--set")
        .arg("n=30")
        .arg("--set")
        .arg("n_eval=400")
        .arg("generate");
    run_ok(&mut gen);

    // Build the optimal policy by hand: each task's belief centered on the
    // true parameter with zero width.
    let env = io::read_environment_json(&dir.path().join("env.json")).unwrap();
    let tasks: Vec<hieropo::policy::TaskBelief> = env
        .thetas()
        .iter()
        .map(|theta| hieropo::policy::TaskBelief {
            mean: theta.clone(),
            cov: nalgebra::DMatrix::zeros(env.d(), env.d()),
        })
        .collect();
    let optimal =
        hieropo::policy::LearnedPolicy::from_parts(LearnerKind::Oracle, 0.0, env.d(), tasks)
            .unwrap();
    let policy_path = dir.path().join("optimal.json");
    io::write_policy_json(&policy_path, &optimal).unwrap();

    let mut eval = bin();
    eval.arg("--seed")
        .arg("11")
        .arg("--out")
        .arg(dir.path())
        .arg("--set")
        .arg("n_eval=400")
        .arg("evaluate")
        .arg("--policy")
        .arg(&policy_path)
        .arg("--env")
        .arg(dir.path().join("env.json"));
    run_ok(&mut eval);

    let rows: Vec<io::EvaluationRow> =
        io::read_csv_rows(&dir.path().join("evaluation.csv")).unwrap();
    let aggregate = rows.iter().find(|r| r.task_id == "aggregate").unwrap();
    assert_eq!(aggregate.suboptimality, 0.0);
    for row in &rows {
        assert!(row.suboptimality.abs() < 1e-15);
    }
}

#[test]
fn sweep_emits_the_documented_row_counts() {
    let dir = tempdir().unwrap();
    let mut cmd = bin();
    // Scaled-down sweep: 2 values x 3 runs x 3 learners.
    for kv in [
        "sweep_values=20,40",
        "n_runs=3",
        "n_eval=200",
        "learners=hier,flat,oracle",
    ] {
        cmd.arg("--set").arg(kv);
    }
    cmd.arg("--seed")
        .arg("5")
        .arg("--out")
        .arg(dir.path())
        .arg("sweep");
    run_ok(&mut cmd);

    let runs: Vec<io::RunRow> = io::read_csv_rows(&dir.path().join("runs.csv")).unwrap();
    let aggregate: Vec<io::AggregateRow> =
        io::read_csv_rows(&dir.path().join("aggregate.csv")).unwrap();
    assert_eq!(runs.len(), 2 * 3 * 3, "one row per (value, run, learner)");
    assert_eq!(aggregate.len(), 2 * 3, "one row per (value, learner)");
    // Aggregate means equal the mean of the run rows for that cell.
    for agg in &aggregate {
        let cell: Vec<f64> = runs
            .iter()
            .filter(|r| r.learner == agg.learner && r.n == agg.n)
            .map(|r| r.mean_suboptimality)
            .collect();
        assert_eq!(cell.len(), 3);
        let mean = cell.iter().sum::<f64>() / 3.0;
        assert!((mean - agg.mean_suboptimality).abs() < 1e-12);
    }
}

#[test]
fn forced_zero_gamma_gives_finite_bounds() {
    let dir = tempdir().unwrap();
    let mut gen = bin();
    gen.arg("--seed")
        .arg("9")
        .arg("--out")
        .arg(dir.path())
        .arg("--set")
        .arg("n=40")
        .arg("--set")
        .arg("n_eval=300")
        .arg("generate");
    run_ok(&mut gen);

    let mut bounds = bin();
    bounds
        .arg("--seed")
        .arg("9")
        .arg("--out")
        .arg(dir.path())
        .arg("--set")
        .arg("n_eval=300")
        .arg("bounds")
        .arg("--dataset")
        .arg(dir.path().join("dataset.jsonl"))
        .arg("--env")
        .arg(dir.path().join("env.json"))
        .arg("--gamma")
        .arg("0");
    run_ok(&mut bounds);

    let report: serde_json::Value =
        io::read_json(&dir.path().join("bounds.json")).unwrap();
    assert_eq!(report["gamma"]["used"], 0.0);
    assert_eq!(report["gamma"]["source"], "forced");
    let per_task = report["per_task"].as_array().unwrap();
    assert_eq!(per_task.len(), 10);
    // With no coverage credit, every task must report the same finite
    // prior-only epsilon regardless of its record count.
    let first = per_task[0]["general"]["epsilon_total"].as_f64().unwrap();
    assert!(first.is_finite() && first > 0.0);
    for t in per_task {
        let total = t["general"]["epsilon_total"].as_f64().unwrap();
        assert!((total - first).abs() < 1e-12);
    }
}

#[test]
fn show_config_roundtrips_through_the_parser() {
    let out = run_ok(bin().arg("--set").arg("sigma_q=1.5").arg("show-config"));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("sigma_q = 1.5"));
    let parsed =
        hieropo::config::ExperimentConfig::parse_str(&text, Path::new("shown")).unwrap();
    assert_eq!(parsed.env.sigma_q, 1.5);
    assert_eq!(parsed.env.d, 4);
}

/// Deterministic low-rank ratings for pipeline tests: 100 users, 50 items,
/// rank 2, one deterministic pseudo-random stream.
fn synthetic_ratings_text(n_users: usize, n_items: usize) -> String {
    use rand::Rng;
    let mut rng = common::test_rng(77, &[1]);
    let u: Vec<[f64; 2]> = (0..n_users)
        .map(|_| [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5])
        .collect();
    let v: Vec<[f64; 2]> = (0..n_items)
        .map(|_| [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5])
        .collect();
    let mut text = String::new();
    for (i, ui) in u.iter().enumerate() {
        for (j, vj) in v.iter().enumerate() {
            let rating = ui[0] * vj[0] + ui[1] * vj[1];
            text.push_str(&format!("{}::{}::{}\n", i + 1, j + 1, rating));
        }
    }
    text
}

#[test]
fn recsys_prep_completes_and_the_environment_validates() {
    let dir = tempdir().unwrap();
    let ratings = dir.path().join("ratings.dat");
    std::fs::write(&ratings, synthetic_ratings_text(100, 50)).unwrap();

    let mut cmd = bin();
    for kv in [
        "recsys_rank=2",
        "recsys_clusters=2",
        "recsys_slate=5",
        "recsys_m=10",
        "recsys_sweeps=15",
    ] {
        cmd.arg("--set").arg(kv);
    }
    cmd.arg("--seed")
        .arg("21")
        .arg("--out")
        .arg(dir.path())
        .arg("recsys-prep")
        .arg("--ratings")
        .arg(&ratings);
    run_ok(&mut cmd);

    // Reading performs full validation (model SPD, norms, dimensions).
    let env = io::read_environment_json(&dir.path().join("recsys_env.json")).unwrap();
    assert_eq!(env.m(), 10);
    assert_eq!(env.k(), 5);
    assert_eq!(env.d(), 2);
    let params: serde_json::Value =
        io::read_json(&dir.path().join("recsys_params.json")).unwrap();
    assert!(params["sigma"].as_f64().unwrap() > 0.0);
}

#[test]
fn recsys_prep_names_the_cluster_size_when_m_is_too_large() {
    let dir = tempdir().unwrap();
    let ratings = dir.path().join("ratings.dat");
    std::fs::write(&ratings, synthetic_ratings_text(30, 20)).unwrap();

    let mut cmd = bin();
    for kv in ["recsys_rank=2", "recsys_clusters=2", "recsys_m=1000"] {
        cmd.arg("--set").arg(kv);
    }
    cmd.arg("--seed")
        .arg("21")
        .arg("--out")
        .arg(dir.path())
        .arg("recsys-prep")
        .arg("--ratings")
        .arg(&ratings);
    let stderr = run_err(&mut cmd);
    assert!(
        stderr.contains("need at least 1000"),
        "stderr was: {stderr}"
    );
}
