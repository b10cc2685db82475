//! Datasets: in-memory representation, the JSON Lines file format,
//! user-disjoint cross-validation folds and the synthetic salience generator.
//!
//! A dataset file starts with one header object followed by one object per
//! observation:
//!
//! ```text
//! {"schema_version":1,"feature_dim":3,"feature_names":["salience","d1","d2"],"task":"multiclass"}
//! {"user":"u000","seq":0,"observed":2,"candidates":[{"id":0,"features":[0.1,0.5,0.2]}, ...]}
//! ```
//!
//! Candidate features are either a dense array of length `feature_dim` or a
//! sparse string of `index:value` pairs such as `"0:1.5 3:-2"`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::loglinear::{Candidate, Stimulus, ATTRIBUTE_UNUSED, ATTRIBUTE_USED};
use crate::mixture::Observation;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    /// Choose one of several candidates (e.g. resolving a referring expression).
    #[serde(rename = "multiclass")]
    Multiclass,
    /// Use an attribute (`+1`) or not (`−1`).
    #[serde(rename = "binary-attribute")]
    BinaryAttribute,
}

/// One user's observations in the order they occurred.
#[derive(Debug, Clone, PartialEq)]
pub struct UserRecord {
    pub id: String,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    feature_dim: usize,
    feature_names: Vec<String>,
    task: TaskKind,
    users: Vec<UserRecord>,
}

impl Dataset {
    pub fn new(
        feature_dim: usize,
        feature_names: Vec<String>,
        task: TaskKind,
        users: Vec<UserRecord>,
    ) -> Result<Self> {
        if feature_dim == 0 {
            return invalid("feature dimension must be at least 1");
        }
        if !feature_names.is_empty() && feature_names.len() != feature_dim {
            return invalid(format!(
                "{} feature names for feature dimension {}",
                feature_names.len(),
                feature_dim
            ));
        }
        let mut seen = HashSet::new();
        for u in &users {
            if !seen.insert(u.id.as_str()) {
                return invalid(format!("duplicate user id {:?}", u.id));
            }
            if u.observations.is_empty() {
                return invalid(format!("user {:?} has no observations", u.id));
            }
            for o in &u.observations {
                check_observation(o, feature_dim, task).map_err(|msg| {
                    Error::InvalidInput(format!("user {:?}: {}", u.id, msg))
                })?;
            }
        }
        Ok(Self {
            feature_dim,
            feature_names,
            task,
            users,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn users(&self) -> &[UserRecord] {
        &self.users
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn num_observations(&self) -> usize {
        self.users.iter().map(|u| u.observations.len()).sum()
    }

    pub fn max_history_len(&self) -> usize {
        self.users.iter().map(|u| u.observations.len()).max().unwrap_or(0)
    }

    /// The dataset restricted to the users at `indices`, in that order.
    pub fn select_users(&self, indices: &[usize]) -> Dataset {
        Dataset {
            feature_dim: self.feature_dim,
            feature_names: self.feature_names.clone(),
            task: self.task,
            users: indices.iter().map(|&i| self.users[i].clone()).collect(),
        }
    }

    /// Parses a dataset from JSON Lines text.
    pub fn from_jsonl(reader: impl BufRead) -> Result<Self> {
        parse(reader)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = fs::File::open(path)?;
        parse(BufReader::new(file))
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        let header = Header {
            schema_version: SCHEMA_VERSION,
            feature_dim: self.feature_dim,
            feature_names: self.feature_names.clone(),
            task: self.task,
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for u in &self.users {
            for (seq, o) in u.observations.iter().enumerate() {
                let rec = RecordOut {
                    user: &u.id,
                    seq: seq as u64,
                    observed: o.observed(),
                    candidates: o.stimulus().candidates(),
                };
                serde_json::to_writer(&mut out, &rec)?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

fn check_observation(
    o: &Observation,
    feature_dim: usize,
    task: TaskKind,
) -> std::result::Result<(), String> {
    let s = o.stimulus();
    if s.feature_dim() != feature_dim {
        return Err(format!(
            "stimulus feature dimension {} does not match dataset feature dimension {}",
            s.feature_dim(),
            feature_dim
        ));
    }
    if task == TaskKind::BinaryAttribute {
        let mut ids: Vec<i64> = s.candidates().iter().map(|c| c.id).collect();
        ids.sort_unstable();
        if ids != [ATTRIBUTE_UNUSED, ATTRIBUTE_USED] {
            return Err(format!(
                "binary-attribute stimuli need exactly the candidates -1 and +1, found {ids:?}"
            ));
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema_version: u32,
    feature_dim: usize,
    #[serde(default)]
    feature_names: Vec<String>,
    task: TaskKind,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FeaturesIn {
    Dense(Vec<f64>),
    Sparse(String),
}

#[derive(Deserialize)]
struct CandidateIn {
    id: i64,
    features: FeaturesIn,
}

#[derive(Deserialize)]
struct RecordIn {
    user: String,
    seq: u64,
    observed: i64,
    candidates: Vec<CandidateIn>,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    user: &'a str,
    seq: u64,
    observed: i64,
    candidates: &'a [Candidate],
}

/// Expands `"i:v i:v ..."` into a dense vector of length `dim`.
pub fn parse_sparse(text: &str, dim: usize) -> std::result::Result<Vec<f64>, String> {
    let mut dense = vec![0.0; dim];
    let mut seen = HashSet::new();
    for pair in text.split_whitespace() {
        let (idx, val) = pair
            .split_once(':')
            .ok_or_else(|| format!("sparse entry {pair:?} is not index:value"))?;
        let idx: usize = idx
            .parse()
            .map_err(|_| format!("bad feature index in {pair:?}"))?;
        // Accept the unicode minus sign as well as '-'.
        let val: f64 = val
            .replace('\u{2212}', "-")
            .parse()
            .map_err(|_| format!("bad feature value in {pair:?}"))?;
        if idx >= dim {
            return Err(format!("feature index {idx} is not below feature_dim {dim}"));
        }
        if !seen.insert(idx) {
            return Err(format!("feature index {idx} given twice"));
        }
        dense[idx] = val;
    }
    Ok(dense)
}

fn parse(reader: impl BufRead) -> Result<Dataset> {
    let mut lines = reader.lines().enumerate();
    let header: Header = loop {
        match lines.next() {
            None => return Err(Error::Format("dataset file has no header line".into())),
            Some((_, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line)
                    .map_err(|e| Error::Format(format!("bad header line: {e}")))?;
            }
        }
    };
    if header.schema_version != SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "unsupported schema_version {}",
            header.schema_version
        )));
    }
    let dim = header.feature_dim;
    if dim == 0 {
        return Err(Error::Format("feature_dim must be at least 1".into()));
    }
    if !header.feature_names.is_empty() && header.feature_names.len() != dim {
        return Err(Error::Format(format!(
            "{} feature names for feature_dim {}",
            header.feature_names.len(),
            dim
        )));
    }

    let mut order: Vec<String> = Vec::new();
    let mut per_user: HashMap<String, BTreeMap<u64, Observation>> = HashMap::new();
    let mut record = 0;
    for (line_idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        record += 1;
        let fail = |message: String| Error::Load {
            record,
            line: line_idx + 1,
            message,
        };
        let raw: RecordIn = serde_json::from_str(&line).map_err(|e| fail(e.to_string()))?;
        let mut candidates = Vec::with_capacity(raw.candidates.len());
        for c in raw.candidates {
            let features = match c.features {
                FeaturesIn::Dense(v) => {
                    if v.len() != dim {
                        return Err(fail(format!(
                            "candidate {} has {} features, feature_dim is {}",
                            c.id,
                            v.len(),
                            dim
                        )));
                    }
                    v
                }
                FeaturesIn::Sparse(s) => parse_sparse(&s, dim).map_err(&fail)?,
            };
            candidates.push(Candidate::new(c.id, features));
        }
        if !candidates.iter().any(|c| c.id == raw.observed) {
            return Err(fail(format!(
                "observed id absent from candidates (observed {})",
                raw.observed
            )));
        }
        let stimulus = Stimulus::new(candidates).map_err(|e| fail(e.to_string()))?;
        let obs = Observation::new(stimulus, raw.observed).map_err(|e| fail(e.to_string()))?;
        check_observation(&obs, dim, header.task).map_err(&fail)?;

        let entries = per_user.entry(raw.user.clone()).or_insert_with(|| {
            order.push(raw.user.clone());
            BTreeMap::new()
        });
        if entries.contains_key(&raw.seq) {
            return Err(fail(format!(
                "sequence number {} repeated for user {:?}",
                raw.seq, raw.user
            )));
        }
        entries.insert(raw.seq, obs);
    }

    let users = order
        .into_iter()
        .map(|id| {
            let observations = per_user.remove(&id).unwrap_or_default().into_values().collect();
            UserRecord { id, observations }
        })
        .collect();
    Dataset::new(dim, header.feature_names, header.task, users)
}

/// Shuffles user indices with `seed` and cuts them into `folds` groups whose
/// sizes differ by at most one.
pub fn user_folds(num_users: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return invalid(format!("cross-validation needs at least 2 folds, got {folds}"));
    }
    if folds > num_users {
        return invalid(format!(
            "{folds} folds requested but the dataset has only {num_users} users"
        ));
    }
    let mut idx: Vec<usize> = (0..num_users).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = num_users / folds;
    let extra = num_users % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        let mut fold = idx[start..start + len].to_vec();
        fold.sort_unstable();
        out.push(fold);
        start += len;
    }
    Ok(out)
}

/// `(train, test)` pairs with user-disjoint test folds covering every user once.
pub fn split_user_folds(d: &Dataset, folds: usize, seed: u64) -> Result<Vec<(Dataset, Dataset)>> {
    let assignment = user_folds(d.users.len(), folds, seed)?;
    Ok(assignment
        .iter()
        .enumerate()
        .map(|(f, test_idx)| {
            let train_idx: Vec<usize> = assignment
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, fold)| fold.iter().copied())
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            (d.select_users(&train_idx), d.select_users(test_idx))
        })
        .collect())
}

/// Generating rule of a synthetic user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SalienceRule {
    /// Always picks the most salient candidate.
    #[serde(rename = "max")]
    Max,
    /// Always picks the least salient candidate.
    #[serde(rename = "min")]
    Min,
}

impl SalienceRule {
    pub fn group_index(self) -> usize {
        match self {
            SalienceRule::Max => 0,
            SalienceRule::Min => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SalienceRule::Max => "max",
            SalienceRule::Min => "min",
        }
    }

    /// Position of the candidate this rule selects; salience is feature 0.
    pub fn select(self, s: &Stimulus) -> usize {
        let sal = |i: usize| s.candidates()[i].features[0];
        let mut best = 0;
        for i in 1..s.len() {
            let better = match self {
                SalienceRule::Max => sal(i) > sal(best),
                SalienceRule::Min => sal(i) < sal(best),
            };
            if better {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_users: usize,
    pub obs_per_user: usize,
    pub candidates_per_scene: usize,
    pub fraction_max_group: f64,
    pub noise_rate: f64,
    pub distractor_features: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_users: 100,
            obs_per_user: 10,
            candidates_per_scene: 5,
            fraction_max_group: 0.5,
            noise_rate: 0.0,
            distractor_features: 2,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_users == 0 {
            return invalid("num_users must be at least 1");
        }
        if self.obs_per_user == 0 {
            return invalid("obs_per_user must be at least 1");
        }
        if self.candidates_per_scene < 2 {
            return invalid(format!(
                "candidates_per_scene must be at least 2, got {}",
                self.candidates_per_scene
            ));
        }
        if !(0.0..=1.0).contains(&self.fraction_max_group) {
            return invalid("fraction_max_group must lie in [0, 1]");
        }
        let max_users = self.num_users as f64 * self.fraction_max_group;
        if (max_users - max_users.round()).abs() > 1e-9 {
            return invalid(format!(
                "num_users * fraction_max_group = {max_users} is not an integer"
            ));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return invalid("noise_rate must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn num_max_users(&self) -> usize {
        (self.num_users as f64 * self.fraction_max_group - 1e-9).ceil().max(0.0) as usize
    }

    pub fn feature_names(&self) -> Vec<String> {
        std::iter::once("salience".to_string())
            .chain((1..=self.distractor_features).map(|i| format!("distractor_{i}")))
            .collect()
    }
}

/// A generated dataset with each user's generating rule.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub truth: Vec<(String, SalienceRule)>,
}

/// Generates scenes of `candidates_per_scene` candidates with one salience
/// feature and `distractor_features` noise features, all uniform on [0, 1).
/// The first users follow the max-salience rule, the rest the min-salience
/// rule; with probability `noise_rate` the choice is replaced by a uniformly
/// random candidate.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let width = cfg.num_users.saturating_sub(1).to_string().len().max(3);
    let n_max = cfg.num_max_users();
    let dim = 1 + cfg.distractor_features;

    let mut users = Vec::with_capacity(cfg.num_users);
    let mut truth = Vec::with_capacity(cfg.num_users);
    for u in 0..cfg.num_users {
        let id = format!("u{u:0width$}");
        let rule = if u < n_max {
            SalienceRule::Max
        } else {
            SalienceRule::Min
        };
        let mut observations = Vec::with_capacity(cfg.obs_per_user);
        for _ in 0..cfg.obs_per_user {
            let mut saliences: Vec<f64> = Vec::with_capacity(cfg.candidates_per_scene);
            let mut candidates = Vec::with_capacity(cfg.candidates_per_scene);
            for c in 0..cfg.candidates_per_scene {
                let sal = loop {
                    let v: f64 = rng.random();
                    if !saliences.contains(&v) {
                        break v;
                    }
                };
                saliences.push(sal);
                let mut features = Vec::with_capacity(dim);
                features.push(sal);
                features.extend((0..cfg.distractor_features).map(|_| rng.random::<f64>()));
                candidates.push(Candidate::new(c as i64, features));
            }
            let stimulus = Stimulus::new(candidates)?;
            let noisy = rng.random::<f64>() < cfg.noise_rate;
            let random_pick = rng.random_range(0..cfg.candidates_per_scene);
            let pos = if noisy {
                random_pick
            } else {
                rule.select(&stimulus)
            };
            let observed = stimulus.candidates()[pos].id;
            observations.push(Observation::new(stimulus, observed)?);
        }
        truth.push((id.clone(), rule));
        users.push(UserRecord { id, observations });
    }
    let dataset = Dataset::new(dim, cfg.feature_names(), TaskKind::Multiclass, users)?;
    Ok(SyntheticData { dataset, truth })
}

/// Sidecar path holding ground-truth group labels for `dataset_path`.
pub fn truth_path(dataset_path: impl AsRef<Path>) -> PathBuf {
    let mut s = dataset_path.as_ref().as_os_str().to_owned();
    s.push(".truth");
    PathBuf::from(s)
}

/// Writes the `user,group,rule` sidecar CSV.
pub fn save_truth(path: impl AsRef<Path>, truth: &[(String, SalienceRule)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["user", "group", "rule"])?;
    for (user, rule) in truth {
        w.write_record([user.as_str(), &rule.group_index().to_string(), rule.name()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<Vec<(String, SalienceRule)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let rule = match row.get(2) {
            Some("max") => SalienceRule::Max,
            Some("min") => SalienceRule::Min,
            other => return Err(Error::Format(format!("unknown rule {other:?} in truth file"))),
        };
        out.push((row.get(0).unwrap_or_default().to_string(), rule));
    }
    Ok(out)
}

impl SyntheticData {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.dataset.save(&path)?;
        save_truth(truth_path(&path), &self.truth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TWO_USERS: &str = r#"{"schema_version":1,"feature_dim":2,"feature_names":["a","b"],"task":"multiclass"}
{"user":"x","seq":1,"observed":1,"candidates":[{"id":0,"features":[1.0,0.0]},{"id":1,"features":[0.0,1.0]}]}
{"user":"y","seq":0,"observed":0,"candidates":[{"id":0,"features":"0:1"},{"id":1,"features":"1:2.5"}]}
{"user":"x","seq":0,"observed":0,"candidates":[{"id":0,"features":[0.5,0.5]},{"id":1,"features":[0.0,0.0]}]}
{"user":"y","seq":3,"observed":1,"candidates":[{"id":0,"features":[1,1]},{"id":1,"features":[2,2]}]}
"#;

    #[test]
    fn loads_users_in_sequence_order() {
        let d = Dataset::from_jsonl(TWO_USERS.as_bytes()).unwrap();
        assert_eq!(d.users().len(), 2);
        assert_eq!(d.users()[0].id, "x");
        assert_eq!(d.users()[0].observations.len(), 2);
        assert_eq!(d.users()[1].observations.len(), 2);
        // seq 0 comes first even though it appears later in the file.
        assert_eq!(d.users()[0].observations[0].stimulus().candidates()[0].features, vec![0.5, 0.5]);
        assert_eq!(d.users()[1].observations[0].stimulus().candidates()[1].features, vec![0.0, 2.5]);
    }

    #[test]
    fn observed_id_must_be_a_candidate() {
        let text = TWO_USERS.replace(r#""seq":3,"observed":1"#, r#""seq":3,"observed":7"#);
        match Dataset::from_jsonl(text.as_bytes()).unwrap_err() {
            Error::Load { record, message, .. } => {
                assert_eq!(record, 4);
                assert!(message.contains("observed id absent from candidates"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_sequence_numbers_are_rejected() {
        let text = TWO_USERS.replace(r#""seq":3"#, r#""seq":0"#);
        assert!(matches!(Dataset::from_jsonl(text.as_bytes()), Err(Error::Load { record: 4, .. })));
    }

    #[test]
    fn single_candidate_and_bad_indices_are_rejected() {
        let header = r#"{"schema_version":1,"feature_dim":2,"task":"multiclass"}"#;
        let one = format!("{header}\n{}\n", r#"{"user":"a","seq":0,"observed":0,"candidates":[{"id":0,"features":[1,2]}]}"#);
        assert!(matches!(Dataset::from_jsonl(one.as_bytes()), Err(Error::Load { record: 1, .. })));
        let oob = format!("{header}\n{}\n", r#"{"user":"a","seq":0,"observed":0,"candidates":[{"id":0,"features":"2:1"},{"id":1,"features":"0:1"}]}"#);
        assert!(matches!(Dataset::from_jsonl(oob.as_bytes()), Err(Error::Load { record: 1, .. })));
        let short = format!("{header}\n{}\n", r#"{"user":"a","seq":0,"observed":0,"candidates":[{"id":0,"features":[1]},{"id":1,"features":[0,1]}]}"#);
        assert!(matches!(Dataset::from_jsonl(short.as_bytes()), Err(Error::Load { .. })));
    }

    #[test]
    fn binary_task_requires_plus_minus_one() {
        let header = r#"{"schema_version":1,"feature_dim":1,"task":"binary-attribute"}"#;
        let ok = format!("{header}\n{}\n", r#"{"user":"a","seq":0,"observed":1,"candidates":[{"id":1,"features":[2]},{"id":-1,"features":[-2]}]}"#);
        assert_eq!(Dataset::from_jsonl(ok.as_bytes()).unwrap().task(), TaskKind::BinaryAttribute);
        let bad = format!("{header}\n{}\n", r#"{"user":"a","seq":0,"observed":1,"candidates":[{"id":1,"features":[2]},{"id":0,"features":[-2]}]}"#);
        assert!(Dataset::from_jsonl(bad.as_bytes()).is_err());
    }

    #[test]
    fn sparse_features_are_densified() {
        assert_eq!(parse_sparse("0:1.5 3:\u{2212}2", 4).unwrap(), vec![1.5, 0.0, 0.0, -2.0]);
        assert_eq!(parse_sparse("0:1.5 3:-2", 4).unwrap(), vec![1.5, 0.0, 0.0, -2.0]);
        assert!(parse_sparse("4:1", 4).is_err());
        assert!(parse_sparse("1:1 1:2", 4).is_err());
        assert!(parse_sparse("x", 4).is_err());
    }

    #[test]
    fn paper_fold_sizes() {
        let folds = user_folds(63, 9, 3).unwrap();
        assert!(folds.iter().all(|f| f.len() == 7));
        let folds = user_folds(100, 2, 3).unwrap();
        assert_eq!(folds[0].len(), 50);
        assert_eq!(folds[1].len(), 50);
        assert!(user_folds(100, 200, 0).is_err());
        assert!(user_folds(10, 1, 0).is_err());
    }

    #[test]
    fn synthetic_defaults() {
        let data = generate_synthetic(&SyntheticConfig::default()).unwrap();
        assert_eq!(data.dataset.users().len(), 100);
        assert_eq!(data.dataset.num_observations(), 1000);
        assert_eq!(data.dataset.feature_dim(), 3);
        let max_users = data.truth.iter().filter(|(_, r)| *r == SalienceRule::Max).count();
        assert_eq!(max_users, 50);
    }

    #[test]
    fn noiseless_users_follow_their_rule() {
        let data = generate_synthetic(&SyntheticConfig { seed: 11, ..Default::default() }).unwrap();
        for (user, (id, rule)) in data.dataset.users().iter().zip(&data.truth) {
            assert_eq!(&user.id, id);
            for o in &user.observations {
                let sal: Vec<f64> = o.stimulus().candidates().iter().map(|c| c.features[0]).collect();
                let chosen = sal[o.position()];
                let extreme = match rule {
                    SalienceRule::Max => sal.iter().copied().fold(f64::MIN, f64::max),
                    SalienceRule::Min => sal.iter().copied().fold(f64::MAX, f64::min),
                };
                assert_eq!(chosen, extreme);
                // no salience ties within a scene
                let mut sorted = sal.clone();
                sorted.sort_by(f64::total_cmp);
                sorted.dedup();
                assert_eq!(sorted.len(), sal.len());
            }
        }
    }

    #[test]
    fn noise_changes_some_choices() {
        let cfg = SyntheticConfig { noise_rate: 0.5, seed: 2, ..Default::default() };
        let data = generate_synthetic(&cfg).unwrap();
        let off_rule = data
            .dataset
            .users()
            .iter()
            .zip(&data.truth)
            .flat_map(|(u, (_, rule))| u.observations.iter().map(move |o| (o, *rule)))
            .filter(|(o, rule)| rule.select(o.stimulus()) != o.position())
            .count();
        // expected about 0.5 * 0.8 * 1000 = 400
        assert!((300..500).contains(&off_rule), "{off_rule}");
    }

    #[test]
    fn invalid_synthetic_configs() {
        for cfg in [
            SyntheticConfig { candidates_per_scene: 1, ..Default::default() },
            SyntheticConfig { num_users: 5, fraction_max_group: 0.5, ..Default::default() },
            SyntheticConfig { noise_rate: 1.0, ..Default::default() },
        ] {
            assert!(generate_synthetic(&cfg).is_err());
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let render = |seed| {
            let d = generate_synthetic(&SyntheticConfig { seed, ..Default::default() }).unwrap();
            let mut buf = Vec::new();
            d.dataset.write_jsonl(&mut buf).unwrap();
            buf
        };
        assert_eq!(render(7), render(7));
        assert_ne!(render(7), render(8));
    }

    #[test]
    fn truth_sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("synthetic.jsonl");
        let data = generate_synthetic(&SyntheticConfig { num_users: 4, ..Default::default() }).unwrap();
        data.save(&path).unwrap();
        assert_eq!(load_truth(truth_path(&path)).unwrap(), data.truth);
        assert_eq!(Dataset::load(&path).unwrap(), data.dataset);
    }

    proptest! {
        #[test]
        fn jsonl_round_trip(seed in 0u64..1000, users in 1usize..6, obs in 1usize..4, cands in 2usize..5) {
            let cfg = SyntheticConfig {
                num_users: users * 2,
                obs_per_user: obs,
                candidates_per_scene: cands,
                noise_rate: 0.3,
                seed,
                ..Default::default()
            };
            let d = generate_synthetic(&cfg).unwrap().dataset;
            let mut buf = Vec::new();
            d.write_jsonl(&mut buf).unwrap();
            let back = Dataset::from_jsonl(buf.as_slice()).unwrap();
            prop_assert_eq!(back, d);
        }

        #[test]
        fn folds_partition_users(n in 2usize..80, k in 2usize..10, seed in 0u64..100) {
            prop_assume!(k <= n);
            let folds = user_folds(n, k, seed).unwrap();
            let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
