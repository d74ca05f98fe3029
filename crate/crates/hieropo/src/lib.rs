//! Hierarchical off-policy optimization for multi-task contextual bandits.
//!
//! The library solves many related contextual bandit tasks from a single
//! logged dataset. Tasks share a latent hyper-parameter: each task parameter
//! is drawn from a Gaussian centered at the hyper-parameter, rewards are
//! linear in features with Gaussian noise. Everything is conjugate, so all
//! posteriors have closed forms.
//!
//! Main pieces:
//! - [`posterior`]: exact hierarchical inference (task statistics, conditional
//!   and marginal task posteriors, the hyper-posterior) plus an independent
//!   joint-Gaussian oracle for verification.
//! - [`policy`]: pessimistic (lower-confidence-bound) policy learners:
//!   HierOPO, FlatOPO, OracleOPO, and a single-task baseline.
//! - [`envsim`]: synthetic environments, logged-data generation, Monte Carlo
//!   policy evaluation, and experiment sweeps.
//! - [`bounds`]: executable suboptimality bounds, assumption checkers, and
//!   exploration-ratio (gamma) estimation.
//! - [`recsys`]: a ratings-to-bandit preparation pipeline (ALS factorization,
//!   GMM clustering, hierarchical parameter estimation).
//! - [`io`] / [`config`]: file formats and experiment configuration shared
//!   with the `hieropo` command-line binary.

pub mod bounds;
pub mod config;
pub mod envsim;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod policy;
pub mod posterior;
pub mod recsys;
pub mod rng;

pub use error::{Error, Result};
pub use model::{HierModelConfig, LoggedDataset, LoggedRecord};
