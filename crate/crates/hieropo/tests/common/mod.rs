//! Shared helpers for integration tests: random well-conditioned models and
//! random logged datasets.

#![allow(dead_code)]

use hieropo::model::{HierModelConfig, LoggedDataset, LoggedRecord};
use hieropo::rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

/// Test-only stream purpose, distinct from the library's reserved ids.
pub const TEST_PURPOSE: u64 = 900;

pub fn test_rng(seed: u64, path: &[u64]) -> ChaCha12Rng {
    let mut full = vec![TEST_PURPOSE];
    full.extend_from_slice(path);
    rng::stream(seed, &full)
}

fn standard_normal(rng: &mut ChaCha12Rng) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

/// A random symmetric positive definite matrix with eigenvalues bounded
/// away from zero.
pub fn random_spd(d: usize, rng: &mut ChaCha12Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| standard_normal(rng) / (d as f64).sqrt());
    &a * a.transpose() + DMatrix::identity(d, d) * 0.3
}

/// A random vector inside the unit ball (never exactly on the boundary).
pub fn random_feature(d: usize, rng: &mut ChaCha12Rng) -> DVector<f64> {
    let mut v = DVector::from_fn(d, |_, _| standard_normal(rng));
    let norm = v.norm();
    if norm > 0.0 {
        v /= norm;
    }
    v * (0.999 * rng.random::<f64>())
}

pub struct RandomInstance {
    pub model: HierModelConfig,
    pub dataset: LoggedDataset,
}

/// A random model and dataset. The rewards are arbitrary; the posterior
/// identities under test hold for any logged values.
pub fn random_instance(d: usize, m: usize, n: usize, seed: u64) -> RandomInstance {
    let mut rng = test_rng(seed, &[d as u64, m as u64, n as u64]);
    let mu_q = DVector::from_fn(d, |_, _| standard_normal(&mut rng));
    let sigma_q = random_spd(d, &mut rng);
    let sigma_0 = random_spd(d, &mut rng);
    let sigma = 0.3 + rng.random::<f64>();
    let model = HierModelConfig::new(mu_q, sigma_q, sigma_0, sigma)
        .expect("random SPD inputs are valid");

    let k = 3;
    let records: Vec<LoggedRecord> = (0..n)
        .map(|_| LoggedRecord {
            task: rng.random_range(0..m),
            action: rng.random_range(0..k),
            features: random_feature(d, &mut rng),
            reward: 2.0 * standard_normal(&mut rng),
        })
        .collect();
    let dataset = LoggedDataset::new(m, d, k, records).expect("records are in range");
    RandomInstance { model, dataset }
}

/// Mean and standard error of a sample.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
