//! MAP training of the group model by expectation maximization.
//!
//! The E-step computes each user's posterior over groups under the current
//! parameters. The M-step takes a few L-BFGS steps on the expected
//! complete-data log-likelihood plus the Gaussian log-prior (the "lower
//! bound") rather than solving it exactly; every accepted step increases the
//! bound and therefore the training objective.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::loglinear::{self, log_softmax, log_sum_exp, softmax, WeightVector};
use crate::mixture::ModelParams;
use crate::optimizer::{self, inf_norm, OptimizerConfig};

/// Half-width of the uniform interval the group weights are drawn from.
pub const INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Number of latent groups K.
    pub num_groups: usize,
    /// Prior variance of each entry of π.
    pub sigma_pi: f64,
    /// Prior variance of each entry of every ρ_g.
    pub sigma_rho: f64,
    pub em_max_iters: usize,
    /// Stop when the relative change of the objective falls below this.
    pub em_tol: f64,
    /// L-BFGS steps per M-step.
    pub inner_steps: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Threads used across restarts. Does not affect results.
    #[serde(skip)]
    pub workers: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            num_groups: 2,
            sigma_pi: 0.3,
            sigma_rho: 1.0,
            em_max_iters: 200,
            em_tol: 1e-6,
            inner_steps: 5,
            restarts: 5,
            seed: 0,
            workers: 1,
        }
    }
}

impl Hyperparams {
    pub fn with_groups(mut self, k: usize) -> Self {
        self.num_groups = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_groups == 0 {
            return invalid("number of groups must be at least 1");
        }
        for (name, v) in [("sigma_pi", self.sigma_pi), ("sigma_rho", self.sigma_rho)] {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(format!("{name} must be a positive finite variance, got {v}"));
            }
        }
        if self.inner_steps == 0 {
            return invalid("inner_steps must be at least 1");
        }
        if self.restarts == 0 {
            return invalid("restarts must be at least 1");
        }
        if self.em_max_iters == 0 {
            return invalid("em_max_iters must be at least 1");
        }
        if !(self.em_tol >= 0.0) {
            return invalid("em_tol must be non-negative");
        }
        Ok(())
    }
}

/// Per-user posterior group probabilities, rows aligned with the dataset's users.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub rows: Vec<Vec<f64>>,
}

fn check_dims(d: &Dataset, m: &ModelParams) -> Result<()> {
    if d.feature_dim() != m.feature_dim() {
        return invalid(format!(
            "dataset feature dimension {} does not match model feature dimension {}",
            d.feature_dim(),
            m.feature_dim()
        ));
    }
    Ok(())
}

/// `Σ_{d∈D^u} log P(b_d|s_d;ρ_g)` for each user (rows) and group (columns).
fn user_group_loglik(d: &Dataset, m: &ModelParams) -> Vec<Vec<f64>> {
    d.users()
        .iter()
        .map(|u| {
            m.group_weights()
                .iter()
                .map(|w| {
                    u.observations
                        .iter()
                        .map(|o| loglinear::log_prob_at(o.stimulus(), o.position(), w.as_slice()))
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// Gaussian log-prior without its normalizing constants.
pub fn log_prior(m: &ModelParams, h: &Hyperparams) -> f64 {
    let pi_sq: f64 = m.pi().iter().map(|v| v * v).sum();
    let rho_sq: f64 = m.group_weights().iter().map(WeightVector::squared_norm).sum();
    -pi_sq / (2.0 * h.sigma_pi) - rho_sq / (2.0 * h.sigma_rho)
}

/// Log marginal likelihood of the data plus the log-prior:
/// `Σ_u log Σ_g P(g|π) Π_d P(b_d|s_d;ρ_g) + log N(π) + Σ_g log N(ρ_g)`,
/// dropping parameter-independent constants.
pub fn log_posterior_objective(d: &Dataset, m: &ModelParams, h: &Hyperparams) -> Result<f64> {
    check_dims(d, m)?;
    let (_, objective) = e_step_and_objective(d, m, h);
    Ok(objective)
}

fn e_step_and_objective(d: &Dataset, m: &ModelParams, h: &Hyperparams) -> (Responsibilities, f64) {
    let log_pi = log_softmax(m.pi());
    let ll = user_group_loglik(d, m);
    let mut total = 0.0;
    let rows = ll
        .into_iter()
        .map(|row| {
            let joint: Vec<f64> = row.iter().zip(&log_pi).map(|(a, b)| a + b).collect();
            total += log_sum_exp(&joint);
            softmax(&joint)
        })
        .collect();
    (Responsibilities { rows }, total + log_prior(m, h))
}

/// Posterior group membership of every training user under `m`.
pub fn e_step(d: &Dataset, m: &ModelParams) -> Result<Responsibilities> {
    check_dims(d, m)?;
    let log_pi = log_softmax(m.pi());
    let rows = user_group_loglik(d, m)
        .into_iter()
        .map(|row| {
            let joint: Vec<f64> = row.iter().zip(&log_pi).map(|(a, b)| a + b).collect();
            softmax(&joint)
        })
        .collect();
    Ok(Responsibilities { rows })
}

/// Value and gradient (in [`ModelParams::to_flat`] order) of
/// `Σ_u Σ_g r_u(g)·[log P(g|π) + Σ_d log P(b_d|s_d;ρ_g)]` plus the log-prior.
pub fn lower_bound_and_grad(
    d: &Dataset,
    r: &Responsibilities,
    m: &ModelParams,
    h: &Hyperparams,
) -> Result<(f64, Vec<f64>)> {
    check_dims(d, m)?;
    let k = m.num_groups();
    let n = m.feature_dim();
    if r.rows.len() != d.users().len() {
        return invalid(format!(
            "{} responsibility rows for {} users",
            r.rows.len(),
            d.users().len()
        ));
    }
    if let Some(row) = r.rows.iter().find(|row| row.len() != k) {
        return invalid(format!("responsibility row has {} entries, expected {k}", row.len()));
    }

    let log_pi = log_softmax(m.pi());
    let prior_probs = softmax(m.pi());
    let mut grad = vec![0.0; k * (1 + n)];
    let mut value = 0.0;
    let (grad_pi, grad_rho) = grad.split_at_mut(k);

    for (u, row) in d.users().iter().zip(&r.rows) {
        for g in 0..k {
            let weight = row[g];
            grad_pi[g] += weight - prior_probs[g];
            if weight == 0.0 {
                continue;
            }
            let w = m.group(g).as_slice();
            let block = &mut grad_rho[g * n..(g + 1) * n];
            let mut ll = 0.0;
            for o in &u.observations {
                ll += loglinear::log_prob_and_grad_into(o.stimulus(), o.position(), w, weight, block);
            }
            value += weight * (log_pi[g] + ll);
        }
    }

    for (gp, p) in grad_pi.iter_mut().zip(m.pi()) {
        *gp -= p / h.sigma_pi;
    }
    for (g, w) in m.group_weights().iter().enumerate() {
        for (gr, v) in grad_rho[g * n..(g + 1) * n].iter_mut().zip(w.as_slice()) {
            *gr -= v / h.sigma_rho;
        }
    }
    Ok((value + log_prior(m, h), grad))
}

/// One row of the training trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    /// 0 is the initial point.
    pub iteration: usize,
    pub objective: f64,
    /// Infinity norm of the objective gradient at this iterate.
    pub max_abs_grad: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestartSummary {
    pub restart: usize,
    pub seed: u64,
    pub final_objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct EmRun {
    pub params: ModelParams,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
}

impl EmRun {
    pub fn final_objective(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.objective)
    }

    pub fn iterations(&self) -> usize {
        self.trace.last().map_or(0, |r| r.iteration)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Trace of the winning restart.
    pub trace: Vec<TraceRow>,
    pub restarts: Vec<RestartSummary>,
    pub best_restart: usize,
    pub final_objective: f64,
}

/// `π = 0`, `ρ_g` entries i.i.d. uniform on `[−INIT_SCALE, INIT_SCALE]`.
pub fn initial_params(num_groups: usize, feature_dim: usize, seed: u64) -> Result<ModelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = (0..num_groups)
        .map(|_| {
            WeightVector(
                (0..feature_dim)
                    .map(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE))
                    .collect(),
            )
        })
        .collect();
    ModelParams::new(vec![0.0; num_groups], weights)
}

fn numerical(iteration: usize, message: impl Into<String>) -> Error {
    Error::Numerical {
        iteration,
        message: message.into(),
    }
}

/// Runs EM from `init` until the relative objective change drops below
/// `h.em_tol` or `h.em_max_iters` iterations have run.
pub fn em_run(d: &Dataset, h: &Hyperparams, init: ModelParams) -> Result<EmRun> {
    h.validate()?;
    if d.is_empty() {
        return invalid("cannot train on an empty dataset");
    }
    check_dims(d, &init)?;
    if init.num_groups() != h.num_groups {
        return invalid(format!(
            "initial model has {} groups, hyperparameters ask for {}",
            init.num_groups(),
            h.num_groups
        ));
    }
    let started = Instant::now();
    let k = init.num_groups();
    let n = init.feature_dim();
    let cfg = OptimizerConfig::default().with_max_steps(h.inner_steps);

    let mut params = init;
    let (mut resp, mut objective) = e_step_and_objective(d, &params, h);
    if !objective.is_finite() {
        return Err(numerical(0, "objective is not finite at the initial point"));
    }
    let (_, grad) = lower_bound_and_grad(d, &resp, &params, h)?;
    let mut trace = vec![TraceRow {
        iteration: 0,
        objective,
        max_abs_grad: inf_norm(&grad),
        seconds: started.elapsed().as_secs_f64(),
    }];
    let mut converged = false;

    for iteration in 1..=h.em_max_iters {
        let bound = |x: &[f64]| -> (f64, Vec<f64>) {
            let evaluated = ModelParams::from_flat(k, n, x)
                .and_then(|mm| lower_bound_and_grad(d, &resp, &mm, h));
            match evaluated {
                Ok((v, g)) => (-v, g.into_iter().map(|x| -x).collect()),
                Err(_) => (f64::INFINITY, vec![f64::NAN; x.len()]),
            }
        };
        let step = optimizer::minimize(bound, &params.to_flat(), &cfg)
            .map_err(|e| numerical(iteration, e.to_string()))?;
        params = ModelParams::from_flat(k, n, &step.x)
            .map_err(|e| numerical(iteration, e.to_string()))?;

        let (r, new_objective) = e_step_and_objective(d, &params, h);
        if !new_objective.is_finite() {
            return Err(numerical(iteration, "objective became non-finite"));
        }
        resp = r;
        let (_, grad) = lower_bound_and_grad(d, &resp, &params, h)?;
        trace.push(TraceRow {
            iteration,
            objective: new_objective,
            max_abs_grad: inf_norm(&grad),
            seconds: started.elapsed().as_secs_f64(),
        });

        let change = (new_objective - objective).abs();
        let scale = objective.abs();
        objective = new_objective;
        let relative = if scale > 0.0 { change / scale } else { change };
        if relative < h.em_tol {
            converged = true;
            break;
        }
    }
    Ok(EmRun {
        params,
        trace,
        converged,
    })
}

/// MAP-EM with `h.restarts` random initializations; returns the restart with
/// the highest final objective (earliest restart on ties).
pub fn em_fit(d: &Dataset, h: &Hyperparams) -> Result<TrainOutcome> {
    h.validate()?;
    if d.is_empty() {
        return invalid("cannot train on an empty dataset");
    }
    let seeds: Vec<u64> = (0..h.restarts as u64).map(|r| h.seed.wrapping_add(r)).collect();
    let run = |seed: &u64| -> Result<EmRun> {
        em_run(d, h, initial_params(h.num_groups, d.feature_dim(), *seed)?)
    };
    let runs: Vec<Result<EmRun>> = if h.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(h.workers)
            .build()
            .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
        pool.install(|| seeds.par_iter().map(run).collect())
    } else {
        seeds.iter().map(run).collect()
    };

    let mut best: Option<(usize, EmRun)> = None;
    let mut summaries = Vec::with_capacity(runs.len());
    for (i, run) in runs.into_iter().enumerate() {
        let run = run?;
        summaries.push(RestartSummary {
            restart: i,
            seed: seeds[i],
            final_objective: run.final_objective(),
            iterations: run.iterations(),
            converged: run.converged,
        });
        let better = best
            .as_ref()
            .is_none_or(|(_, b)| run.final_objective() > b.final_objective());
        if better {
            best = Some((i, run));
        }
    }
    let (best_restart, run) = best.expect("at least one restart");
    Ok(TrainOutcome {
        final_objective: run.final_objective(),
        params: run.params,
        trace: run.trace,
        restarts: summaries,
        best_restart,
    })
}

/// Writes the trace as CSV with columns `iteration,objective,max_abs_grad,seconds`.
pub fn write_trace_csv(path: impl AsRef<Path>, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in trace {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
