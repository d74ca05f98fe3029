//! Recommender data preparation: ratings → low-rank factors → user
//! clusters → hierarchical model parameters → a simulatable environment.
//!
//! The pipeline treats users as tasks. User factors from [`als_factorize`]
//! are clustered with [`gmm_fit`]; the cluster centers give the hyper-prior,
//! the most populated cluster gives the task prior and the task pool, and
//! the factorization residual gives the reward noise. The resulting
//! [`Environment`] serves slates of item-factor rows.

mod als;
mod gmm;

pub use als::{als_factorize, Factorization};
pub use gmm::{gmm_fit, GmmFit};

use nalgebra::{DMatrix, DVector};

use crate::envsim::{Environment, SlateSampler};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::HierModelConfig;
use crate::rng::{self, purpose};

/// Diagonal jitter making estimated covariances usable as model inputs.
const PARAM_JITTER: f64 = 1e-6;

/// Floor applied to the estimated reward noise.
const SIGMA_FLOOR: f64 = 1e-6;

/// Sparse ratings with dense, remapped user and item indices.
#[derive(Debug, Clone)]
pub struct RatingsMatrix {
    triples: Vec<(usize, usize, f64)>,
    user_ids: Vec<u64>,
    item_ids: Vec<u64>,
}

impl RatingsMatrix {
    /// Remaps raw (user, item, rating) triples to dense indices, ordered by
    /// the original ids. Duplicate (user, item) pairs are rejected.
    pub fn from_triples(raw: Vec<(u64, u64, f64)>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::invalid("ratings", "need at least one rating"));
        }
        let mut user_ids: Vec<u64> = raw.iter().map(|&(u, _, _)| u).collect();
        user_ids.sort_unstable();
        user_ids.dedup();
        let mut item_ids: Vec<u64> = raw.iter().map(|&(_, i, _)| i).collect();
        item_ids.sort_unstable();
        item_ids.dedup();
        let user_index =
            |id: u64| user_ids.binary_search(&id).expect("id collected above");
        let item_index =
            |id: u64| item_ids.binary_search(&id).expect("id collected above");

        let mut triples: Vec<(usize, usize, f64)> = raw
            .iter()
            .map(|&(u, i, r)| -> Result<(usize, usize, f64)> {
                if !r.is_finite() {
                    return Err(Error::invalid(
                        "ratings",
                        format!("non-finite rating for user {u}, item {i}"),
                    ));
                }
                Ok((user_index(u), item_index(i), r))
            })
            .collect::<Result<Vec<_>>>()?;
        triples.sort_unstable_by_key(|&(u, i, _)| (u, i));
        for w in triples.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::invalid(
                    "ratings",
                    format!(
                        "duplicate rating for user {}, item {}",
                        user_ids[w[0].0], item_ids[w[0].1]
                    ),
                ));
            }
        }
        Ok(Self {
            triples,
            user_ids,
            item_ids,
        })
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Dense-index triples, sorted by (user, item).
    pub fn triples(&self) -> &[(usize, usize, f64)] {
        &self.triples
    }

    /// Original user ids in dense-index order.
    pub fn user_ids(&self) -> &[u64] {
        &self.user_ids
    }

    /// Original item ids in dense-index order.
    pub fn item_ids(&self) -> &[u64] {
        &self.item_ids
    }

    /// Ratings grouped by dense user index.
    pub fn by_user(&self) -> Vec<Vec<(usize, f64)>> {
        let mut out = vec![Vec::new(); self.n_users()];
        for &(u, i, r) in &self.triples {
            out[u].push((i, r));
        }
        out
    }

    /// Ratings grouped by dense item index.
    pub fn by_item(&self) -> Vec<Vec<(usize, f64)>> {
        let mut out = vec![Vec::new(); self.n_items()];
        for &(u, i, r) in &self.triples {
            out[i].push((u, r));
        }
        out
    }
}

/// Hierarchical model parameters estimated from a factorization and a
/// clustering of its user factors.
#[derive(Debug, Clone)]
pub struct EstimatedHierParams {
    /// Mean of the cluster centers.
    pub mu_q: DVector<f64>,
    /// Covariance of the cluster centers (ML over k centers) plus jitter.
    pub sigma_q: DMatrix<f64>,
    /// Center of the most populated cluster.
    pub mu_star: DVector<f64>,
    /// That cluster's fitted covariance plus jitter.
    pub sigma_0: DMatrix<f64>,
    /// Factorization residual RMSE, floored away from zero.
    pub sigma: f64,
    /// The unfloored residual RMSE.
    pub sigma_raw: f64,
    /// Index of the chosen cluster.
    pub chosen_cluster: usize,
    /// Dense user indices assigned to the chosen cluster.
    pub cluster_users: Vec<usize>,
    /// Eigenvalues of the center covariance before jitter, recorded because
    /// k centers cannot span more than k - 1 directions.
    pub raw_sigma_q_eigenvalues: Vec<f64>,
    /// Eigenvalues of the chosen cluster covariance before jitter.
    pub raw_sigma_0_eigenvalues: Vec<f64>,
}

impl EstimatedHierParams {
    /// The learner-facing model these estimates induce.
    pub fn model(&self) -> Result<HierModelConfig> {
        HierModelConfig::new(
            self.mu_q.clone(),
            self.sigma_q.clone(),
            self.sigma_0.clone(),
            self.sigma,
        )
    }
}

fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut eigs: Vec<f64> = linalg::symmetric_eigenvalues(m).iter().cloned().collect();
    eigs.sort_by(f64::total_cmp);
    eigs
}

/// Derives hierarchical model parameters: hyper-prior from the spread of
/// cluster centers, task prior from the most populated cluster, reward noise
/// from the factorization residual.
pub fn estimate_hier_params(
    factorization: &Factorization,
    gmm: &GmmFit,
    ratings: &RatingsMatrix,
) -> Result<EstimatedHierParams> {
    if gmm.k < 2 {
        return Err(Error::invalid(
            "gmm",
            "need at least 2 clusters: a single center has no spread to \
             estimate the hyper-prior covariance from",
        ));
    }
    let d = factorization.rank;
    if gmm.means.ncols() != d {
        return Err(Error::DimensionMismatch {
            what: "cluster means vs factorization rank".to_string(),
            expected: d,
            actual: gmm.means.ncols(),
        });
    }
    if factorization.u.nrows() != ratings.n_users() {
        return Err(Error::DimensionMismatch {
            what: "user factors vs ratings".to_string(),
            expected: ratings.n_users(),
            actual: factorization.u.nrows(),
        });
    }

    let k = gmm.k;
    let mu_q = DVector::from_fn(d, |j, _| gmm.means.column(j).mean());
    let mut centered = DMatrix::<f64>::zeros(d, d);
    for c in 0..k {
        let diff = gmm.means.row(c).transpose() - &mu_q;
        centered.ger(1.0, &diff, &diff, 1.0);
    }
    let raw_sigma_q = centered / k as f64;
    let sigma_q = &raw_sigma_q + DMatrix::<f64>::identity(d, d) * PARAM_JITTER;

    let assignments = gmm.assignments(&factorization.u)?;
    let mut counts = vec![0usize; k];
    for &a in &assignments {
        counts[a] += 1;
    }
    let chosen_cluster = counts
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| a.cmp(b).then(ib.cmp(ia)))
        .map(|(i, _)| i)
        .expect("k >= 2");
    let cluster_users: Vec<usize> = assignments
        .iter()
        .enumerate()
        .filter(|(_, &a)| a == chosen_cluster)
        .map(|(i, _)| i)
        .collect();

    let mu_star = gmm.means.row(chosen_cluster).transpose();
    let raw_sigma_0 = gmm.covariances[chosen_cluster].clone();
    let sigma_0 = &raw_sigma_0 + DMatrix::<f64>::identity(d, d) * PARAM_JITTER;

    let sigma_raw = factorization.rmse(ratings);
    Ok(EstimatedHierParams {
        mu_q,
        sigma_q,
        mu_star,
        sigma_0,
        sigma: sigma_raw.max(SIGMA_FLOOR),
        sigma_raw,
        chosen_cluster,
        cluster_users,
        raw_sigma_q_eigenvalues: sorted_eigenvalues(&raw_sigma_q),
        raw_sigma_0_eigenvalues: sorted_eigenvalues(&raw_sigma_0),
    })
}

/// Builds a simulatable environment: `m` users drawn without replacement
/// from the chosen cluster become the tasks (keeping their factor rows as
/// ground-truth parameters), and slates are `k` distinct item-factor rows.
/// Item features are rescaled by one global constant so every row has norm
/// at most 1; the constant is recorded on the sampler. Task parameters are
/// not rescaled, so rescaling changes the reward scale, not just units.
pub fn build_recsys_environment(
    params: &EstimatedHierParams,
    factorization: &Factorization,
    k: usize,
    m: usize,
    seed: u64,
) -> Result<Environment> {
    if m == 0 {
        return Err(Error::invalid("m", "must be >= 1"));
    }
    if params.cluster_users.len() < m {
        return Err(Error::ClusterTooSmall {
            size: params.cluster_users.len(),
            required: m,
        });
    }
    let max_norm = factorization
        .v
        .row_iter()
        .map(|row| row.norm())
        .fold(0.0f64, f64::max);
    let scale = if max_norm > 1.0 { 1.0 / max_norm } else { 1.0 };
    let items = &factorization.v * scale;

    let mut task_rng = rng::stream(seed, &[purpose::TASKS]);
    let chosen = rand::seq::index::sample(&mut task_rng, params.cluster_users.len(), m);
    let thetas: Vec<DVector<f64>> = chosen
        .into_iter()
        .map(|pick| {
            factorization
                .u
                .row(params.cluster_users[pick])
                .transpose()
        })
        .collect();

    Environment::new(
        params.mu_star.clone(),
        thetas,
        SlateSampler::ItemPool { items, k, scale },
        params.sigma,
        params.model()?,
    )
}
