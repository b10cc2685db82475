//! The basic log-linear behavior model.
//!
//! A stimulus offers a finite set of candidate behaviors, each with a
//! precomputed feature vector. Given weights `w`, the probability of candidate
//! `b` is `exp(w·φ(b)) / Σ_b' exp(w·φ(b'))`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Candidate id of the "attribute used" behavior in a binary-attribute stimulus.
pub const ATTRIBUTE_USED: i64 = 1;
/// Candidate id of the "attribute not used" behavior.
pub const ATTRIBUTE_UNUSED: i64 = -1;

/// One behavior a user may exhibit in response to a stimulus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: i64,
    pub features: Vec<f64>,
}

impl Candidate {
    pub fn new(id: i64, features: Vec<f64>) -> Self {
        Self { id, features }
    }
}

/// A finite, ordered set of candidate behaviors sharing one feature dimension.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stimulus {
    candidates: Vec<Candidate>,
}

impl Stimulus {
    /// Builds a stimulus, rejecting fewer than two candidates, ragged feature
    /// vectors, non-finite features and duplicate ids.
    pub fn new(candidates: Vec<Candidate>) -> Result<Self> {
        if candidates.len() < 2 {
            return invalid(format!(
                "a stimulus needs at least 2 candidates, got {}",
                candidates.len()
            ));
        }
        let dim = candidates[0].features.len();
        for (i, c) in candidates.iter().enumerate() {
            if c.features.len() != dim {
                return invalid(format!(
                    "candidate {} has feature dimension {}, expected {}",
                    i,
                    c.features.len(),
                    dim
                ));
            }
            if c.features.iter().any(|v| !v.is_finite()) {
                return invalid(format!("candidate {} has a non-finite feature", c.id));
            }
            if candidates[..i].iter().any(|o| o.id == c.id) {
                return invalid(format!("duplicate candidate id {}", c.id));
            }
        }
        Ok(Self { candidates })
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.candidates[0].features.len()
    }

    /// Position of candidate `id` in the candidate list.
    pub fn position_of(&self, id: i64) -> Option<usize> {
        self.candidates.iter().position(|c| c.id == id)
    }

    pub(crate) fn require_position(&self, id: i64) -> Result<usize> {
        self.position_of(id)
            .map_or_else(|| invalid(format!("candidate id {id} is not in the stimulus")), Ok)
    }

    fn check_dim(&self, w: &WeightVector) -> Result<()> {
        if w.len() != self.feature_dim() {
            return invalid(format!(
                "weight dimension {} does not match feature dimension {}",
                w.len(),
                self.feature_dim()
            ));
        }
        Ok(())
    }

    /// Raw scores `w·φ(b)` in candidate order.
    pub fn scores(&self, w: &WeightVector) -> Result<Vec<f64>> {
        self.check_dim(w)?;
        Ok(self.scores_unchecked(w.as_slice()))
    }

    fn scores_unchecked(&self, w: &[f64]) -> Vec<f64> {
        self.candidates.iter().map(|c| dot(&c.features, w)).collect()
    }
}

impl<'de> Deserialize<'de> for Stimulus {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            candidates: Vec<Candidate>,
        }
        let raw = Raw::deserialize(deserializer)?;
        Stimulus::new(raw.candidates).map_err(serde::de::Error::custom)
    }
}

/// Weights of one log-linear model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(pub Vec<f64>);

impl WeightVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn squared_norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }
}

impl From<Vec<f64>> for WeightVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ln Σ exp(x_i)`, shifted by the maximum. Returns `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| x - lse).collect()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log P(b|s;w)` for every candidate of `s`, in candidate order.
pub fn log_distribution(s: &Stimulus, w: &WeightVector) -> Result<Vec<f64>> {
    Ok(log_softmax(&s.scores(w)?))
}

/// `P(b|s;w)` for every candidate of `s`.
pub fn distribution(s: &Stimulus, w: &WeightVector) -> Result<Vec<f64>> {
    Ok(softmax(&s.scores(w)?))
}

/// Id of the most probable candidate. Ties go to the earliest candidate.
pub fn predict(s: &Stimulus, dist: &[f64]) -> Result<i64> {
    if dist.len() != s.len() {
        return invalid(format!(
            "distribution has {} entries but the stimulus has {} candidates",
            dist.len(),
            s.len()
        ));
    }
    let mut best = 0;
    for (i, &p) in dist.iter().enumerate().skip(1) {
        if p > dist[best] {
            best = i;
        }
    }
    Ok(s.candidates[best].id)
}

/// `∇_w log P(observed|s;w) = φ(observed) − E_{b~P(·|s;w)}[φ(b)]`.
pub fn grad_log_prob(s: &Stimulus, observed: i64, w: &WeightVector) -> Result<Vec<f64>> {
    s.check_dim(w)?;
    let pos = s.require_position(observed)?;
    let mut grad = vec![0.0; w.len()];
    log_prob_and_grad_into(s, pos, w.as_slice(), 1.0, &mut grad);
    Ok(grad)
}

/// Returns `log P(candidates[pos]|s;w)` and adds `scale·∇_w` of it into `out`.
/// Dimensions are the caller's responsibility.
pub(crate) fn log_prob_and_grad_into(
    s: &Stimulus,
    pos: usize,
    w: &[f64],
    scale: f64,
    out: &mut [f64],
) -> f64 {
    let logp = log_softmax(&s.scores_unchecked(w));
    if scale != 0.0 {
        for (c, lp) in s.candidates.iter().zip(&logp) {
            let coef = -scale * lp.exp();
            for (o, f) in out.iter_mut().zip(&c.features) {
                *o += coef * f;
            }
        }
        for (o, f) in out.iter_mut().zip(&s.candidates[pos].features) {
            *o += scale * f;
        }
    }
    logp[pos]
}

pub(crate) fn log_prob_at(s: &Stimulus, pos: usize, w: &[f64]) -> f64 {
    log_softmax(&s.scores_unchecked(w))[pos]
}

/// Encodes a binary attribute-use decision as a two-candidate stimulus with
/// `φ(b,a,c) = b·φ'(a,c)`: candidate `+1` carries `φ'`, candidate `−1` carries
/// `−φ'`. Returns the stimulus and the observed candidate id.
pub fn encode_binary(attr_features: &[f64], use_attribute: bool) -> Result<(Stimulus, i64)> {
    if attr_features.is_empty() {
        return invalid("attribute feature vector is empty");
    }
    let negated = attr_features.iter().map(|v| -v).collect();
    let s = Stimulus::new(vec![
        Candidate::new(ATTRIBUTE_USED, attr_features.to_vec()),
        Candidate::new(ATTRIBUTE_UNUSED, negated),
    ])?;
    let observed = if use_attribute {
        ATTRIBUTE_USED
    } else {
        ATTRIBUTE_UNUSED
    };
    Ok((s, observed))
}
