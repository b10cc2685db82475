//! Predict-then-observe evaluation and metrics.
//!
//! In sequential mode every test user starts from the group prior; each
//! observation is first predicted from the current posterior and only then
//! added to the user's history. Static mode predicts every observation from
//! the prior mixture. Metrics pool all predictions (micro-averaging), also
//! across cross-validation folds.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{split_user_folds, Dataset, TaskKind};
use crate::error::{invalid, Error, Result};
use crate::loglinear::{predict, ATTRIBUTE_USED};
use crate::mixture::{self, predict_adapted, predict_new_user, ModelParams, PosteriorState};
use crate::training::{em_fit, Hyperparams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Sequential,
    Static,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Sequential => "sequential",
            EvalMode::Static => "static",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRecord {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
    pub user: String,
    /// 1-based index of the observation in the user's history.
    pub position: usize,
    pub predicted: i64,
    pub observed: i64,
    pub correct: bool,
    /// Posterior entropy (nats) at the time of the prediction.
    pub entropy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn add(&mut self, predicted_positive: bool, gold_positive: bool) {
        match (predicted_positive, gold_positive) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `2PR/(P+R)`, or 0 when `P+R = 0`.
    pub fn f1(&self) -> f64 {
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Micro-averaged F1 of the "attribute used" class over pooled predictions.
pub fn micro_f1(task: TaskKind, predictions: &[PredictionRecord]) -> Result<f64> {
    if task != TaskKind::BinaryAttribute {
        return invalid("micro F1 is only defined for binary-attribute tasks");
    }
    Ok(confusion(predictions).f1())
}

fn confusion(predictions: &[PredictionRecord]) -> Confusion {
    let mut c = Confusion::default();
    for p in predictions {
        c.add(p.predicted == ATTRIBUTE_USED, p.observed == ATTRIBUTE_USED);
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub position: usize,
    pub accuracy: f64,
    pub f1: Option<f64>,
    pub mean_entropy: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub task: TaskKind,
    pub num_predictions: usize,
    pub accuracy: f64,
    pub micro_f1: Option<f64>,
    pub confusion: Option<Confusion>,
    pub curves: Vec<CurvePoint>,
    #[serde(skip)]
    pub predictions: Vec<PredictionRecord>,
}

impl EvalReport {
    pub fn from_predictions(mode: EvalMode, task: TaskKind, predictions: Vec<PredictionRecord>) -> Self {
        let binary = task == TaskKind::BinaryAttribute;
        let correct = predictions.iter().filter(|p| p.correct).count();
        let max_pos = predictions.iter().map(|p| p.position).max().unwrap_or(0);

        let mut curves = Vec::with_capacity(max_pos);
        for position in 1..=max_pos {
            let at: Vec<&PredictionRecord> = predictions.iter().filter(|p| p.position == position).collect();
            if at.is_empty() {
                continue;
            }
            let n = at.len();
            let hits = at.iter().filter(|p| p.correct).count();
            let entropy: f64 = at.iter().map(|p| p.entropy).sum();
            let f1 = binary.then(|| {
                let mut c = Confusion::default();
                for p in &at {
                    c.add(p.predicted == ATTRIBUTE_USED, p.observed == ATTRIBUTE_USED);
                }
                c.f1()
            });
            curves.push(CurvePoint {
                position,
                accuracy: hits as f64 / n as f64,
                f1,
                mean_entropy: entropy / n as f64,
                n,
            });
        }

        let conf = binary.then(|| confusion(&predictions));
        Self {
            mode,
            task,
            num_predictions: predictions.len(),
            accuracy: ratio(correct, predictions.len()),
            micro_f1: conf.map(|c| c.f1()),
            confusion: conf,
            curves,
            predictions,
        }
    }

    /// Pools the predictions of several reports of the same mode and task.
    pub fn pool(reports: Vec<EvalReport>) -> Result<Self> {
        let first = reports.first().ok_or_else(|| Error::InvalidInput("no reports to pool".into()))?;
        let (mode, task) = (first.mode, first.task);
        if reports.iter().any(|r| r.mode != mode || r.task != task) {
            return invalid("cannot pool reports of different modes or tasks");
        }
        let predictions = reports.into_iter().flat_map(|r| r.predictions).collect();
        Ok(Self::from_predictions(mode, task, predictions))
    }

    pub fn curve_at(&self, position: usize) -> Option<&CurvePoint> {
        self.curves.iter().find(|c| c.position == position)
    }

    /// Curves CSV: `position,accuracy,f1,mean_entropy,n` (f1 empty for multiclass).
    pub fn write_curves_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for c in &self.curves {
            w.serialize(c)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_predictions_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for p in &self.predictions {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Summary JSON covering one or more reports.
pub fn write_summary_json(path: impl AsRef<Path>, reports: &[&EvalReport]) -> Result<()> {
    #[derive(Serialize)]
    struct Summary<'a> {
        aggregation: &'static str,
        entropy_unit: &'static str,
        positive_class: Option<i64>,
        reports: &'a [&'a EvalReport],
    }
    let binary = reports.iter().any(|r| r.task == TaskKind::BinaryAttribute);
    let summary = Summary {
        aggregation: "metrics pool all predictions across users and folds (micro-averaged)",
        entropy_unit: "nats",
        positive_class: binary.then_some(ATTRIBUTE_USED),
        reports,
    };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn check_test_set(test: &Dataset, m: &ModelParams) -> Result<()> {
    if test.is_empty() {
        return invalid("test set has no users");
    }
    if test.feature_dim() != m.feature_dim() {
        return invalid(format!(
            "dataset feature dimension {} does not match model feature dimension {}",
            test.feature_dim(),
            m.feature_dim()
        ));
    }
    Ok(())
}

/// Sequential predict-then-observe evaluation.
pub fn evaluate_sequential(test: &Dataset, m: &ModelParams) -> Result<EvalReport> {
    check_test_set(test, m)?;
    let mut predictions = Vec::with_capacity(test.num_observations());
    for user in test.users() {
        let mut state = PosteriorState::new(m);
        for (i, o) in user.observations.iter().enumerate() {
            let dist = predict_adapted(o.stimulus(), &state, m)?;
            let predicted = predict(o.stimulus(), &dist)?;
            predictions.push(PredictionRecord {
                fold: None,
                user: user.id.clone(),
                position: i + 1,
                predicted,
                observed: o.observed(),
                correct: predicted == o.observed(),
                entropy: state.entropy(),
            });
            state.update(o, m)?;
        }
    }
    Ok(EvalReport::from_predictions(EvalMode::Sequential, test.task(), predictions))
}

/// Prior-mixture evaluation without posterior updates.
pub fn evaluate_static(test: &Dataset, m: &ModelParams) -> Result<EvalReport> {
    check_test_set(test, m)?;
    let prior_entropy = mixture::entropy(&mixture::group_prior(m.pi())?);
    let mut predictions = Vec::with_capacity(test.num_observations());
    for user in test.users() {
        for (i, o) in user.observations.iter().enumerate() {
            let dist = predict_new_user(o.stimulus(), m)?;
            let predicted = predict(o.stimulus(), &dist)?;
            predictions.push(PredictionRecord {
                fold: None,
                user: user.id.clone(),
                position: i + 1,
                predicted,
                observed: o.observed(),
                correct: predicted == o.observed(),
                entropy: prior_entropy,
            });
        }
    }
    Ok(EvalReport::from_predictions(EvalMode::Static, test.task(), predictions))
}

#[derive(Debug, Clone)]
pub struct XvalConfig {
    pub folds: usize,
    /// Seed for the fold assignment.
    pub seed: u64,
    pub groups_list: Vec<usize>,
    /// Training hyperparameters; `num_groups` is overridden per entry of `groups_list`.
    pub hyper: Hyperparams,
    pub workers: usize,
}

#[derive(Debug, Clone)]
pub struct GroupsResult {
    pub num_groups: usize,
    pub sequential: EvalReport,
    pub static_: EvalReport,
    /// Final training objective of each fold's model.
    pub fold_objectives: Vec<f64>,
}

fn tag_fold(mut r: EvalReport, fold: usize) -> EvalReport {
    for p in &mut r.predictions {
        p.fold = Some(fold);
    }
    r
}

/// User-disjoint cross-validation: for every fold and every K, trains on the
/// other folds and evaluates on the held-out users in both modes.
pub fn cross_validate(d: &Dataset, cfg: &XvalConfig) -> Result<Vec<GroupsResult>> {
    if cfg.groups_list.is_empty() {
        return invalid("no group counts to evaluate");
    }
    let splits = split_user_folds(d, cfg.folds, cfg.seed)?;
    for (f, (train, test)) in splits.iter().enumerate() {
        let train_ids: HashSet<&str> = train.users().iter().map(|u| u.id.as_str()).collect();
        if let Some(u) = test.users().iter().find(|u| train_ids.contains(u.id.as_str())) {
            return invalid(format!("fold {f} is not user-disjoint: {:?} is in train and test", u.id));
        }
    }

    let jobs: Vec<(usize, usize)> = cfg
        .groups_list
        .iter()
        .flat_map(|&k| (0..splits.len()).map(move |f| (k, f)))
        .collect();
    let run = |&(k, f): &(usize, usize)| -> Result<(f64, EvalReport, EvalReport)> {
        let (train, test) = &splits[f];
        let h = Hyperparams {
            num_groups: k,
            workers: 1,
            ..cfg.hyper.clone()
        };
        let outcome = em_fit(train, &h)?;
        let seq = tag_fold(evaluate_sequential(test, &outcome.params)?, f);
        let stat = tag_fold(evaluate_static(test, &outcome.params)?, f);
        Ok((outcome.final_objective, seq, stat))
    };
    let results: Vec<Result<(f64, EvalReport, EvalReport)>> = if cfg.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(run).collect())
    } else {
        jobs.iter().map(run).collect()
    };

    let mut results = results.into_iter();
    let mut out = Vec::with_capacity(cfg.groups_list.len());
    for &k in &cfg.groups_list {
        let mut objectives = Vec::with_capacity(splits.len());
        let mut seqs = Vec::with_capacity(splits.len());
        let mut stats = Vec::with_capacity(splits.len());
        for _ in 0..splits.len() {
            let (obj, seq, stat) = results.next().expect("one result per job")?;
            objectives.push(obj);
            seqs.push(seq);
            stats.push(stat);
        }
        out.push(GroupsResult {
            num_groups: k,
            sequential: EvalReport::pool(seqs)?,
            static_: EvalReport::pool(stats)?,
            fold_objectives: objectives,
        });
    }
    Ok(out)
}
