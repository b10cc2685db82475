//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls into the training or mixture code paths under test;
//! probabilities are computed in plain arithmetic from raw features.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ugm_core::data::{Dataset, TaskKind, UserRecord};
use ugm_core::loglinear::{Candidate, Stimulus, WeightVector};
use ugm_core::mixture::{ModelParams, Observation};
use ugm_core::training::Hyperparams;

/// `P(b|s;w)` for every candidate, computed without any log-space tricks.
pub fn plain_probs(s: &Stimulus, w: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = s
        .candidates()
        .iter()
        .map(|c| c.features.iter().zip(w).map(|(f, x)| f * x).sum::<f64>().exp())
        .collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn plain_prior(pi: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = pi.iter().map(|v| v.exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// `P(D^u | g)` as an explicit product, for each group.
fn user_likelihoods(u: &UserRecord, m: &ModelParams) -> Vec<f64> {
    (0..m.num_groups())
        .map(|g| {
            u.observations
                .iter()
                .map(|o| plain_probs(o.stimulus(), m.group(g).as_slice())[o.position()])
                .product()
        })
        .collect()
}

/// Enumerates every group assignment of every user and sums the products.
pub fn brute_force_objective(d: &Dataset, m: &ModelParams, h: &Hyperparams) -> f64 {
    let prior = plain_prior(m.pi());
    let mut total = 0.0;
    for u in d.users() {
        let lik = user_likelihoods(u, m);
        let marginal: f64 = prior.iter().zip(&lik).map(|(p, l)| p * l).sum();
        total += marginal.ln();
    }
    let pi_sq: f64 = m.pi().iter().map(|v| v * v).sum();
    let rho_sq: f64 = m
        .group_weights()
        .iter()
        .flat_map(|w| w.as_slice().iter())
        .map(|v| v * v)
        .sum();
    total - pi_sq / (2.0 * h.sigma_pi) - rho_sq / (2.0 * h.sigma_rho)
}

/// Posterior group membership by Bayes' rule on explicit products.
pub fn brute_force_responsibilities(d: &Dataset, m: &ModelParams) -> Vec<Vec<f64>> {
    let prior = plain_prior(m.pi());
    d.users()
        .iter()
        .map(|u| {
            let joint: Vec<f64> = prior
                .iter()
                .zip(user_likelihoods(u, m))
                .map(|(p, l)| p * l)
                .collect();
            let z: f64 = joint.iter().sum();
            joint.into_iter().map(|v| v / z).collect()
        })
        .collect()
}

/// Central finite-difference gradient.
pub fn finite_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
        .collect()
}

/// Relative error with an absolute floor so near-zero components compare sanely.
pub fn rel_err(approx: f64, exact: f64) -> f64 {
    (approx - exact).abs() / exact.abs().max(1e-3)
}

/// Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// MAP fit of a single log-linear model on all observations pooled, by
/// Newton's method on `Σ log P(b|s;w) − ‖w‖²/(2σ)`.
pub fn direct_map_fit(d: &Dataset, sigma_rho: f64) -> Vec<f64> {
    let n = d.feature_dim();
    let mut w = vec![0.0; n];
    for _ in 0..100 {
        let mut grad: Vec<f64> = w.iter().map(|v| -v / sigma_rho).collect();
        let mut hess = vec![vec![0.0; n]; n];
        for (i, row) in hess.iter_mut().enumerate() {
            row[i] = 1.0 / sigma_rho;
        }
        for u in d.users() {
            for o in &u.observations {
                let p = plain_probs(o.stimulus(), &w);
                let cands = o.stimulus().candidates();
                let mean: Vec<f64> = (0..n)
                    .map(|j| cands.iter().zip(&p).map(|(c, pc)| pc * c.features[j]).sum())
                    .collect();
                for j in 0..n {
                    grad[j] += cands[o.position()].features[j] - mean[j];
                }
                for (c, pc) in cands.iter().zip(&p) {
                    for a in 0..n {
                        for b in 0..n {
                            hess[a][b] += pc * (c.features[a] - mean[a]) * (c.features[b] - mean[b]);
                        }
                    }
                }
            }
        }
        let step = solve(hess, grad);
        for (wi, si) in w.iter_mut().zip(&step) {
            *wi += si;
        }
        if step.iter().all(|s| s.abs() < 1e-14) {
            break;
        }
    }
    w
}

pub struct SmallShape {
    pub users: usize,
    pub max_obs: usize,
    pub max_candidates: usize,
    pub feature_dim: usize,
}

/// Random multiclass dataset with features in [-1.5, 1.5].
pub fn random_dataset(rng: &mut ChaCha8Rng, shape: &SmallShape) -> Dataset {
    let users = (0..shape.users)
        .map(|u| UserRecord {
            id: format!("r{u}"),
            observations: (0..rng.random_range(1..=shape.max_obs))
                .map(|_| {
                    let c = rng.random_range(2..=shape.max_candidates);
                    let cands = (0..c)
                        .map(|i| {
                            Candidate::new(
                                i as i64,
                                (0..shape.feature_dim).map(|_| rng.random_range(-1.5..1.5)).collect(),
                            )
                        })
                        .collect();
                    let s = Stimulus::new(cands).unwrap();
                    let obs = rng.random_range(0..c) as i64;
                    Observation::new(s, obs).unwrap()
                })
                .collect(),
        })
        .collect();
    Dataset::new(shape.feature_dim, vec![], TaskKind::Multiclass, users).unwrap()
}

pub fn random_model(rng: &mut ChaCha8Rng, k: usize, n: usize) -> ModelParams {
    ModelParams::new(
        (0..k).map(|_| rng.random_range(-1.0..1.0)).collect(),
        (0..k)
            .map(|_| WeightVector((0..n).map(|_| rng.random_range(-1.5..1.5)).collect()))
            .collect(),
    )
    .unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
