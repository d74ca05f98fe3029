//! Experiment configuration: baked-in defaults, a flat `key = value` file
//! format, and key-by-key overrides.
//!
//! Every knob has a default, so an empty configuration runs the standard
//! benchmark. A config file sets keys in any order; later lines win, and
//! command-line overrides are applied on top via [`ExperimentConfig::apply_kv`].

use std::path::{Path, PathBuf};

use crate::envsim::SyntheticEnvConfig;
use crate::error::{Error, Result};
use crate::policy::LearnerKind;

/// Which quantity a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Vary the total number of logged interactions.
    N,
    /// Vary the number of tasks.
    M,
}

impl SweepAxis {
    pub fn tag(self) -> &'static str {
        match self {
            SweepAxis::N => "n",
            SweepAxis::M => "m",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "n" => Ok(SweepAxis::N),
            "m" => Ok(SweepAxis::M),
            other => Err(Error::invalid(
                "sweep_axis",
                format!("expected 'n' or 'm', got '{other}'"),
            )),
        }
    }
}

/// Knobs of the ratings-to-environment pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct RecsysConfig {
    /// Latent factor dimension (the feature dimension d of the built
    /// environment).
    pub rank: usize,
    /// Mixture components used to cluster user factors.
    pub clusters: usize,
    /// Actions per slate in the built environment.
    pub slate: usize,
    /// Tasks (users) drawn from the chosen cluster.
    pub m: usize,
    /// Ridge regularizer of the factorization.
    pub lambda_reg: f64,
    /// Factorization sweeps.
    pub sweeps: usize,
    /// Mixture fit iteration cap.
    pub gmm_iters: usize,
    /// Mixture fit log-likelihood stopping tolerance.
    pub gmm_tol: f64,
}

impl Default for RecsysConfig {
    fn default() -> Self {
        Self {
            rank: 10,
            clusters: 7,
            slate: 10,
            m: 100,
            lambda_reg: 0.1,
            sweeps: 20,
            gmm_iters: 200,
            gmm_tol: 1e-8,
        }
    }
}

/// Full configuration shared by every subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: SyntheticEnvConfig,
    pub learners: Vec<LearnerKind>,
    /// Pessimism width multiplier.
    pub alpha: f64,
    /// Bound failure probability.
    pub delta: f64,
    pub n_runs: usize,
    pub sweep_axis: SweepAxis,
    pub sweep_values: Vec<usize>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub recsys: RecsysConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: SyntheticEnvConfig::default(),
            learners: vec![LearnerKind::Hier, LearnerKind::Flat, LearnerKind::Oracle],
            alpha: 0.1,
            delta: 0.05,
            n_runs: 30,
            sweep_axis: SweepAxis::N,
            sweep_values: vec![100, 250, 500, 1000],
            seed: 0,
            out_dir: PathBuf::from("out"),
            recsys: RecsysConfig::default(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::invalid(key, format!("bad value '{value}': {e}")))
}

impl ExperimentConfig {
    /// Applies one `key = value` override.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "d" => self.env.d = parse_num(key, value)?,
            "K" => self.env.k = parse_num(key, value)?,
            "m" => self.env.m = parse_num(key, value)?,
            "sigma_q" => self.env.sigma_q = parse_num(key, value)?,
            "sigma_0" => self.env.sigma_0 = parse_num(key, value)?,
            "sigma" => self.env.sigma = parse_num(key, value)?,
            "n" => self.env.n = parse_num(key, value)?,
            "n_eval" => self.env.n_eval = parse_num(key, value)?,
            "learners" => {
                self.learners = value
                    .split(',')
                    .map(|t| LearnerKind::parse(t.trim()))
                    .collect::<Result<Vec<_>>>()?;
            }
            "alpha" => self.alpha = parse_num(key, value)?,
            "delta" => self.delta = parse_num(key, value)?,
            "n_runs" => self.n_runs = parse_num(key, value)?,
            "sweep_axis" => self.sweep_axis = SweepAxis::parse(value)?,
            "sweep_values" => {
                self.sweep_values = value
                    .split(',')
                    .map(|v| parse_num::<usize>(key, v))
                    .collect::<Result<Vec<_>>>()?;
            }
            "seed" => self.seed = parse_num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "recsys_rank" => self.recsys.rank = parse_num(key, value)?,
            "recsys_clusters" => self.recsys.clusters = parse_num(key, value)?,
            "recsys_slate" => self.recsys.slate = parse_num(key, value)?,
            "recsys_m" => self.recsys.m = parse_num(key, value)?,
            "recsys_lambda" => self.recsys.lambda_reg = parse_num(key, value)?,
            "recsys_sweeps" => self.recsys.sweeps = parse_num(key, value)?,
            "recsys_gmm_iters" => self.recsys.gmm_iters = parse_num(key, value)?,
            "recsys_gmm_tol" => self.recsys.gmm_tol = parse_num(key, value)?,
            other => {
                return Err(Error::invalid(
                    "config key",
                    format!("unknown key '{other}'"),
                ))
            }
        }
        Ok(())
    }

    /// Parses config text, reporting bad lines by number.
    pub fn parse_str(text: &str, path: &Path) -> Result<Self> {
        let mut config = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("expected 'key = value', got '{line}'"),
                });
            };
            config
                .apply_kv(key.trim(), value)
                .map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
        }
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse_str(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.learners.is_empty() {
            return Err(Error::invalid("learners", "need at least one learner"));
        }
        let mut seen = self.learners.clone();
        seen.sort_by_key(|l| l.tag());
        seen.dedup();
        if seen.len() != self.learners.len() {
            return Err(Error::invalid("learners", "duplicate learner tag"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha", "must be finite and >= 0"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid("delta", "must lie strictly between 0 and 1"));
        }
        if self.n_runs == 0 {
            return Err(Error::invalid("n_runs", "must be >= 1"));
        }
        if self.sweep_values.is_empty() {
            return Err(Error::invalid("sweep_values", "need at least one value"));
        }
        if self.sweep_values[0] == 0 {
            return Err(Error::invalid("sweep_values", "values must be positive"));
        }
        for w in self.sweep_values.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::invalid(
                    "sweep_values",
                    format!("values must be strictly increasing ({} then {})", w[0], w[1]),
                ));
            }
        }
        let r = &self.recsys;
        if r.rank == 0 || r.clusters == 0 || r.slate == 0 || r.m == 0 || r.sweeps == 0 {
            return Err(Error::invalid(
                "recsys config",
                "rank, clusters, slate, m, and sweeps must be positive",
            ));
        }
        if !(r.lambda_reg > 0.0 && r.lambda_reg.is_finite()) {
            return Err(Error::invalid("recsys_lambda", "must be finite and > 0"));
        }
        if r.gmm_iters == 0 {
            return Err(Error::invalid("recsys_gmm_iters", "must be >= 1"));
        }
        if !(r.gmm_tol > 0.0 && r.gmm_tol.is_finite()) {
            return Err(Error::invalid("recsys_gmm_tol", "must be finite and > 0"));
        }
        Ok(())
    }

    /// The effective configuration in its own file format.
    pub fn show(&self) -> String {
        let learners = self
            .learners
            .iter()
            .map(|l| l.tag())
            .collect::<Vec<_>>()
            .join(",");
        let sweep_values = self
            .sweep_values
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "# environment\n\
             d = {}\n\
             K = {}\n\
             m = {}\n\
             sigma_q = {}\n\
             sigma_0 = {}\n\
             sigma = {}\n\
             n = {}\n\
             n_eval = {}\n\
             \n\
             # experiment\n\
             learners = {}\n\
             alpha = {}\n\
             delta = {}\n\
             n_runs = {}\n\
             sweep_axis = {}\n\
             sweep_values = {}\n\
             seed = {}\n\
             out_dir = {}\n\
             \n\
             # ratings pipeline\n\
             recsys_rank = {}\n\
             recsys_clusters = {}\n\
             recsys_slate = {}\n\
             recsys_m = {}\n\
             recsys_lambda = {}\n\
             recsys_sweeps = {}\n\
             recsys_gmm_iters = {}\n\
             recsys_gmm_tol = {}\n",
            self.env.d,
            self.env.k,
            self.env.m,
            self.env.sigma_q,
            self.env.sigma_0,
            self.env.sigma,
            self.env.n,
            self.env.n_eval,
            learners,
            self.alpha,
            self.delta,
            self.n_runs,
            self.sweep_axis.tag(),
            sweep_values,
            self.seed,
            self.out_dir.display(),
            self.recsys.rank,
            self.recsys.clusters,
            self.recsys.slate,
            self.recsys.m,
            self.recsys.lambda_reg,
            self.recsys.sweeps,
            self.recsys.gmm_iters,
            self.recsys.gmm_tol,
        )
    }

    /// The synthetic environment config with one sweep value substituted in.
    pub fn env_at(&self, value: usize) -> SyntheticEnvConfig {
        let mut env = self.env.clone();
        match self.sweep_axis {
            SweepAxis::N => env.n = value,
            SweepAxis::M => env.m = value,
        }
        env
    }
}
