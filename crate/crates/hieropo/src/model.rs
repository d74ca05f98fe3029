//! Model configuration and logged-dataset types.
//!
//! Task ids and actions are 0-based in memory; the file formats in [`crate::io`]
//! use 1-based ids and convert at the boundary.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Symmetry / positive-definiteness tolerance used at construction.
pub const SPD_TOL: f64 = 1e-10;

/// Slack allowed on the unit feature-norm constraint.
pub const FEATURE_NORM_TOL: f64 = 1e-9;

/// Known parameters of the hierarchical linear-Gaussian model.
///
/// The hyper-parameter has prior `N(mu_q, sigma_q)`, each task parameter is
/// drawn from `N(mu_star, sigma_0)`, and rewards are linear in features with
/// noise standard deviation `sigma`.
#[derive(Debug, Clone)]
pub struct HierModelConfig {
    d: usize,
    mu_q: DVector<f64>,
    sigma_q: DMatrix<f64>,
    sigma_0: DMatrix<f64>,
    sigma: f64,
    // Sigma_0^{-1} appears as a matrix factor in the posterior formulas, so it
    // is the one inverse kept around.
    sigma_0_inv: DMatrix<f64>,
}

impl HierModelConfig {
    pub fn new(
        mu_q: DVector<f64>,
        sigma_q: DMatrix<f64>,
        sigma_0: DMatrix<f64>,
        sigma: f64,
    ) -> Result<Self> {
        let d = mu_q.len();
        if d == 0 {
            return Err(Error::invalid("d", "feature dimension must be positive"));
        }
        linalg::check_spd(&sigma_q, d, SPD_TOL, "sigma_q")?;
        linalg::check_spd(&sigma_0, d, SPD_TOL, "sigma_0")?;
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid("sigma", format!("must be > 0, got {sigma}")));
        }
        let sigma_0_inv = linalg::spd_inverse(&sigma_0, "sigma_0")?;
        Ok(Self {
            d,
            mu_q,
            sigma_q,
            sigma_0,
            sigma,
            sigma_0_inv,
        })
    }

    /// Isotropic model: `sigma_q = sq^2 I`, `sigma_0 = s0^2 I`, zero hyper-prior mean.
    pub fn isotropic(d: usize, sq: f64, s0: f64, sigma: f64) -> Result<Self> {
        Self::new(
            DVector::zeros(d),
            DMatrix::identity(d, d) * sq * sq,
            DMatrix::identity(d, d) * s0 * s0,
            sigma,
        )
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn mu_q(&self) -> &DVector<f64> {
        &self.mu_q
    }

    pub fn sigma_q(&self) -> &DMatrix<f64> {
        &self.sigma_q
    }

    pub fn sigma_0(&self) -> &DMatrix<f64> {
        &self.sigma_0
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn sigma_0_inv(&self) -> &DMatrix<f64> {
        &self.sigma_0_inv
    }
}

/// One logged interaction: which task, the chosen action's feature vector,
/// and the observed reward. `action` is informational; the features already
/// belong to the chosen action.
#[derive(Debug, Clone)]
pub struct LoggedRecord {
    pub task: usize,
    pub action: usize,
    pub features: DVector<f64>,
    pub reward: f64,
}

/// A logged dataset over `m` tasks with `d`-dimensional features and `k`
/// actions per context.
#[derive(Debug, Clone)]
pub struct LoggedDataset {
    records: Vec<LoggedRecord>,
    m: usize,
    d: usize,
    k: usize,
}

impl LoggedDataset {
    pub fn new(m: usize, d: usize, k: usize, records: Vec<LoggedRecord>) -> Result<Self> {
        if m == 0 || d == 0 || k == 0 {
            return Err(Error::invalid(
                "dataset header",
                format!("m, d, K must be positive (m={m}, d={d}, K={k})"),
            ));
        }
        for (index, r) in records.iter().enumerate() {
            if r.task >= m {
                return Err(Error::TaskOutOfRange {
                    index,
                    task_id: r.task + 1,
                    m,
                });
            }
            if r.features.len() != d {
                return Err(Error::DimensionMismatch {
                    what: format!("record {index} features"),
                    expected: d,
                    actual: r.features.len(),
                });
            }
            let norm = r.features.norm();
            if norm > 1.0 + FEATURE_NORM_TOL {
                return Err(Error::FeatureNormExceeded { index, norm });
            }
        }
        Ok(Self { records, m, d, k })
    }

    pub fn records(&self) -> &[LoggedRecord] {
        &self.records
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records belonging to one task.
    pub fn task_records(&self, task: usize) -> impl Iterator<Item = &LoggedRecord> {
        self.records.iter().filter(move |r| r.task == task)
    }
}
