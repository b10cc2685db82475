//! Latent user groups on top of the basic log-linear model.
//!
//! Each group `g` has its own weight vector `ρ_g`; a new user is assigned to
//! group `g` with prior probability `softmax(π)_g`. Observing a user's
//! responses sharpens a per-user posterior over groups, which then replaces
//! the prior when mixing the group-level predictions.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::loglinear::{self, log_softmax, softmax, Stimulus, WeightVector};
use crate::training::Hyperparams;

/// One user response to one stimulus.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    stimulus: Stimulus,
    observed: i64,
    position: usize,
}

impl Observation {
    pub fn new(stimulus: Stimulus, observed: i64) -> Result<Self> {
        let position = stimulus.require_position(observed)?;
        Ok(Self {
            stimulus,
            observed,
            position,
        })
    }

    pub fn stimulus(&self) -> &Stimulus {
        &self.stimulus
    }

    pub fn observed(&self) -> i64 {
        self.observed
    }

    /// Position of the observed candidate in the stimulus.
    pub fn position(&self) -> usize {
        self.position
    }
}

/// Trained parameters: group weights `π` and one weight vector per group.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pi: Vec<f64>,
    group_weights: Vec<WeightVector>,
    feature_dim: usize,
}

impl ModelParams {
    pub fn new(pi: Vec<f64>, group_weights: Vec<WeightVector>) -> Result<Self> {
        if pi.is_empty() {
            return invalid("a model needs at least one group");
        }
        if pi.len() != group_weights.len() {
            return invalid(format!(
                "{} group prior weights but {} group weight vectors",
                pi.len(),
                group_weights.len()
            ));
        }
        let feature_dim = group_weights[0].len();
        if feature_dim == 0 {
            return invalid("feature dimension must be at least 1");
        }
        if let Some(g) = group_weights.iter().position(|w| w.len() != feature_dim) {
            return invalid(format!(
                "group {} has {} weights, expected {}",
                g,
                group_weights[g].len(),
                feature_dim
            ));
        }
        let all_finite = pi.iter().all(|v| v.is_finite())
            && group_weights
                .iter()
                .all(|w| w.as_slice().iter().all(|v| v.is_finite()));
        if !all_finite {
            return invalid("model parameters must be finite");
        }
        Ok(Self {
            pi,
            group_weights,
            feature_dim,
        })
    }

    /// All-zero parameters; every group is identical.
    pub fn zeros(num_groups: usize, feature_dim: usize) -> Result<Self> {
        Self::new(
            vec![0.0; num_groups],
            vec![WeightVector::zeros(feature_dim); num_groups],
        )
    }

    pub fn num_groups(&self) -> usize {
        self.pi.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn group_weights(&self) -> &[WeightVector] {
        &self.group_weights
    }

    pub fn group(&self, g: usize) -> &WeightVector {
        &self.group_weights[g]
    }

    /// Number of scalar parameters, `K + K·n`.
    pub fn num_params(&self) -> usize {
        self.num_groups() * (1 + self.feature_dim)
    }

    /// Flattens as `[π_1..π_K, ρ_1, .., ρ_K]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(&self.pi);
        for w in &self.group_weights {
            v.extend_from_slice(w.as_slice());
        }
        v
    }

    /// Inverse of [`ModelParams::to_flat`].
    pub fn from_flat(num_groups: usize, feature_dim: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != num_groups * (1 + feature_dim) {
            return invalid(format!(
                "flat parameter vector has length {}, expected {}",
                flat.len(),
                num_groups * (1 + feature_dim)
            ));
        }
        let (pi, rest) = flat.split_at(num_groups);
        let group_weights = rest
            .chunks(feature_dim)
            .map(|c| WeightVector(c.to_vec()))
            .collect();
        Self::new(pi.to_vec(), group_weights)
    }

    pub(crate) fn check_stimulus(&self, s: &Stimulus) -> Result<()> {
        if s.feature_dim() != self.feature_dim {
            return invalid(format!(
                "stimulus feature dimension {} does not match model feature dimension {}",
                s.feature_dim(),
                self.feature_dim
            ));
        }
        Ok(())
    }

    /// `P(b|s;ρ_g)` for every group, rows indexed by group.
    fn group_distributions(&self, s: &Stimulus) -> Result<Vec<Vec<f64>>> {
        self.check_stimulus(s)?;
        self.group_weights
            .iter()
            .map(|w| loglinear::distribution(s, w))
            .collect()
    }
}

/// `P(g|π) = softmax(π)`.
pub fn group_prior(pi: &[f64]) -> Result<Vec<f64>> {
    if pi.is_empty() {
        return invalid("group prior weights are empty");
    }
    Ok(softmax(pi))
}

fn mix(rows: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rows[0].len()];
    for (row, &wg) in rows.iter().zip(weights) {
        for (o, p) in out.iter_mut().zip(row) {
            *o += wg * p;
        }
    }
    out
}

/// Prediction for a user about whom nothing is known yet:
/// `Σ_g P(b|s;ρ_g)·P(g|π)`.
pub fn predict_new_user(s: &Stimulus, m: &ModelParams) -> Result<Vec<f64>> {
    let rows = m.group_distributions(s)?;
    Ok(mix(&rows, &softmax(&m.pi)))
}

/// Per-user group posterior, kept as accumulated per-group log-likelihoods so
/// that it can be renormalized exactly after any number of observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    probs: Vec<f64>,
    log_prior: Vec<f64>,
    log_lik_per_group: Vec<f64>,
    num_observations: usize,
}

impl PosteriorState {
    /// The prior state of a fresh user under `m`.
    pub fn new(m: &ModelParams) -> Self {
        let log_prior = log_softmax(&m.pi);
        Self {
            probs: softmax(&m.pi),
            log_prior,
            log_lik_per_group: vec![0.0; m.num_groups()],
            num_observations: 0,
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_lik_per_group(&self) -> &[f64] {
        &self.log_lik_per_group
    }

    pub fn num_observations(&self) -> usize {
        self.num_observations
    }

    pub fn num_groups(&self) -> usize {
        self.probs.len()
    }

    fn check_groups(&self, m: &ModelParams) -> Result<()> {
        if self.num_groups() != m.num_groups() {
            return invalid(format!(
                "posterior has {} groups but the model has {}",
                self.num_groups(),
                m.num_groups()
            ));
        }
        Ok(())
    }

    /// Adds one observation to the user's history and renormalizes.
    pub fn update(&mut self, obs: &Observation, m: &ModelParams) -> Result<()> {
        self.check_groups(m)?;
        m.check_stimulus(obs.stimulus())?;
        for (ll, w) in self.log_lik_per_group.iter_mut().zip(&m.group_weights) {
            *ll += loglinear::log_prob_at(obs.stimulus(), obs.position(), w.as_slice());
        }
        self.num_observations += 1;
        self.renormalize();
        Ok(())
    }

    fn renormalize(&mut self) {
        let joint: Vec<f64> = self
            .log_prior
            .iter()
            .zip(&self.log_lik_per_group)
            .map(|(a, b)| a + b)
            .collect();
        self.probs = softmax(&joint);
    }

    /// Shannon entropy of the group posterior in nats.
    pub fn entropy(&self) -> f64 {
        entropy(&self.probs)
    }
}

pub(crate) fn entropy(probs: &[f64]) -> f64 {
    // `+ 0.0` turns the -0.0 of a one-hot posterior into 0.0.
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
        + 0.0
}

/// Returns the state after observing `obs`; `state` is left untouched.
pub fn posterior_update(
    state: &PosteriorState,
    obs: &Observation,
    m: &ModelParams,
) -> Result<PosteriorState> {
    let mut next = state.clone();
    next.update(obs, m)?;
    Ok(next)
}

/// Prediction for the next interaction with a user whose history produced
/// `state`: `Σ_g P(b|s;ρ_g)·P_u(g)`.
pub fn predict_adapted(s: &Stimulus, state: &PosteriorState, m: &ModelParams) -> Result<Vec<f64>> {
    state.check_groups(m)?;
    let rows = m.group_distributions(s)?;
    Ok(mix(&rows, &state.probs))
}

pub fn posterior_entropy(state: &PosteriorState) -> f64 {
    state.entropy()
}

pub const MODEL_FORMAT: &str = "ugm-model";
pub const MODEL_VERSION: u32 = 1;

/// Training provenance stored with a model file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyperparams: Option<Hyperparams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_restart: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_dataset: Option<String>,
}

/// A model together with the feature names it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub params: ModelParams,
    pub feature_names: Vec<String>,
    pub metadata: ModelMetadata,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    num_groups: usize,
    feature_dim: usize,
    feature_names: Vec<String>,
    pi: Vec<f64>,
    group_weights: Vec<Vec<f64>>,
    metadata: ModelMetadata,
}

impl SavedModel {
    pub fn to_json(&self) -> Result<String> {
        let p = &self.params;
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            num_groups: p.num_groups(),
            feature_dim: p.feature_dim(),
            feature_names: self.feature_names.clone(),
            pi: p.pi.clone(),
            group_weights: p.group_weights.iter().map(|w| w.0.clone()).collect(),
            metadata: self.metadata.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Format(format!(
                "expected format {MODEL_FORMAT:?}, found {:?}",
                file.format
            )));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "unsupported model version {}",
                file.version
            )));
        }
        let params = ModelParams::new(
            file.pi,
            file.group_weights.into_iter().map(WeightVector).collect(),
        )?;
        if params.num_groups() != file.num_groups || params.feature_dim() != file.feature_dim {
            return Err(Error::Format(format!(
                "header declares K={} n={} but weights have K={} n={}",
                file.num_groups,
                file.feature_dim,
                params.num_groups(),
                params.feature_dim()
            )));
        }
        if !file.feature_names.is_empty() && file.feature_names.len() != file.feature_dim {
            return Err(Error::Format(format!(
                "{} feature names for feature dimension {}",
                file.feature_names.len(),
                file.feature_dim
            )));
        }
        Ok(Self {
            params,
            feature_names: file.feature_names,
            metadata: file.metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_json()?.as_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
