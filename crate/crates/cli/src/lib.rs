//! Command-line front end for the user-group model: synthesize data, train,
//! evaluate, cross-validate and inspect. `run` returns the process exit code.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use ugm_core::data::{self, generate_synthetic};
use ugm_core::eval::{self, XvalConfig, evaluate_sequential, evaluate_static, write_summary_json};
use ugm_core::mixture::{ModelMetadata, SavedModel};
use ugm_core::training::{em_fit, write_trace_csv};
use ugm_core::{Dataset, Error, EvalReport, Hyperparams, SyntheticConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ugm", version, about = "Latent user-group log-linear models with online adaptation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic salience dataset and its ground-truth sidecar.
    Synthesize(SynthesizeArgs),
    /// Fit a model with MAP-EM and write the model file and training trace.
    Train(TrainArgs),
    /// Evaluate a trained model sequentially and statically on a dataset.
    Eval(EvalArgs),
    /// User-disjoint cross-validation over one or more group counts.
    Xval(XvalArgs),
    /// Print a short description of a dataset or model file.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    /// Output directory; receives dataset.jsonl and dataset.jsonl.truth.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub num_users: usize,
    #[arg(long, default_value_t = 10)]
    pub obs_per_user: usize,
    #[arg(long, default_value_t = 5)]
    pub candidates_per_scene: usize,
    /// Share of users following the max-salience rule (artifact default).
    #[arg(long, default_value_t = 0.5)]
    pub fraction_max_group: f64,
    /// Probability that an observed choice is replaced by a random candidate.
    #[arg(long, default_value_t = 0.0)]
    pub noise_rate: f64,
    /// Number of uniform noise features next to the salience feature (artifact default).
    #[arg(long, default_value_t = 2)]
    pub distractor_features: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct HyperArgs {
    /// Variance of the Gaussian prior on the group-prior logits.
    #[arg(long, default_value_t = 0.3)]
    pub sigma_pi: f64,
    /// Variance of the Gaussian prior on each group's weights.
    #[arg(long, default_value_t = 1.0)]
    pub sigma_rho: f64,
    /// Random restarts of EM (artifact default).
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    /// L-BFGS steps per EM iteration (artifact default).
    #[arg(long, default_value_t = 5)]
    pub inner_steps: usize,
    /// EM iteration cap (artifact default).
    #[arg(long, default_value_t = 200)]
    pub em_max_iters: usize,
    /// Stop when the relative objective change falls below this (artifact default).
    #[arg(long, default_value_t = 1e-6)]
    pub em_tol: f64,
    /// Base seed; restart r uses seed + r.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

impl HyperArgs {
    fn hyperparams(&self, num_groups: usize) -> Hyperparams {
        Hyperparams {
            num_groups,
            sigma_pi: self.sigma_pi,
            sigma_rho: self.sigma_rho,
            em_max_iters: self.em_max_iters,
            em_tol: self.em_tol,
            inner_steps: self.inner_steps,
            restarts: self.restarts,
            seed: self.seed,
            workers: self.workers,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory; receives model.json and trace.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Write the model here instead of <out>/model.json.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Number of latent user groups (artifact default).
    #[arg(long, default_value_t = 2)]
    pub groups: usize,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Output directory for the summary, curve and prediction files.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct XvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory; one k<K>/ subdirectory per group count plus summary.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 9)]
    pub folds: usize,
    /// Comma-separated group counts to compare (artifact default).
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    pub groups_list: Vec<usize>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the chosen command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = sink.write_all(text.as_bytes());
            return code;
        }
    };
    let result = match &cli.command {
        Command::Synthesize(a) => cmd_synthesize(a, stdout),
        Command::Train(a) => cmd_train(a, stdout),
        Command::Eval(a) => cmd_eval(a, stdout),
        Command::Xval(a) => cmd_xval(a, stdout),
        Command::Inspect(a) => cmd_inspect(a, stdout),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            match e {
                Error::Numerical { .. } => EXIT_NUMERICAL,
                _ => EXIT_CONFIG,
            }
        }
    }
}

fn create_dir(dir: &Path) -> ugm_core::Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn say(out: &mut dyn Write, text: std::fmt::Arguments<'_>) -> ugm_core::Result<()> {
    out.write_fmt(text)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn cmd_synthesize(a: &SynthesizeArgs, out: &mut dyn Write) -> ugm_core::Result<()> {
    let cfg = SyntheticConfig {
        num_users: a.num_users,
        obs_per_user: a.obs_per_user,
        candidates_per_scene: a.candidates_per_scene,
        fraction_max_group: a.fraction_max_group,
        noise_rate: a.noise_rate,
        distractor_features: a.distractor_features,
        seed: a.seed,
    };
    let synthetic = generate_synthetic(&cfg)?;
    create_dir(&a.out)?;
    let path = a.out.join("dataset.jsonl");
    synthetic.save(&path)?;
    say(
        out,
        format_args!(
            "wrote {} observations from {} users to {}",
            synthetic.dataset.num_observations(),
            synthetic.dataset.users().len(),
            path.display()
        ),
    )?;
    say(out, format_args!("ground truth: {}", data::truth_path(&path).display()))
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> ugm_core::Result<()> {
    let h = a.hyper.hyperparams(a.groups);
    h.validate()?;
    let dataset = Dataset::load(&a.dataset)?;
    let outcome = em_fit(&dataset, &h)?;
    for r in &outcome.restarts {
        say(
            out,
            format_args!(
                "restart {} (seed {}): objective {:.6} after {} iterations{}",
                r.restart,
                r.seed,
                r.final_objective,
                r.iterations,
                if r.converged { "" } else { " (not converged)" }
            ),
        )?;
    }
    say(
        out,
        format_args!(
            "best restart {}: final objective {:.6}",
            outcome.best_restart, outcome.final_objective
        ),
    )?;

    create_dir(&a.out)?;
    let model_path = a.model.clone().unwrap_or_else(|| a.out.join("model.json"));
    let saved = SavedModel {
        params: outcome.params,
        feature_names: dataset.feature_names().to_vec(),
        metadata: ModelMetadata {
            hyperparams: Some(h),
            final_objective: Some(outcome.final_objective),
            best_restart: Some(outcome.best_restart),
            em_iterations: Some(outcome.trace.len() - 1),
            training_dataset: Some(a.dataset.display().to_string()),
        },
    };
    saved.save(&model_path)?;
    write_trace_csv(a.out.join("trace.csv"), &outcome.trace)?;
    say(out, format_args!("model written to {}", model_path.display()))
}

fn write_report_files(dir: &Path, seq: &EvalReport, stat: &EvalReport) -> ugm_core::Result<()> {
    create_dir(dir)?;
    write_summary_json(dir.join("summary.json"), &[seq, stat])?;
    seq.write_curves_csv(dir.join("curves_sequential.csv"))?;
    stat.write_curves_csv(dir.join("curves_static.csv"))?;
    seq.write_predictions_csv(dir.join("predictions_sequential.csv"))?;
    stat.write_predictions_csv(dir.join("predictions_static.csv"))
}

fn describe(out: &mut dyn Write, label: &str, r: &EvalReport) -> ugm_core::Result<()> {
    match r.micro_f1 {
        Some(f1) => say(out, format_args!("{label}: accuracy {:.4}, micro-F1 {:.4}", r.accuracy, f1)),
        None => say(out, format_args!("{label}: accuracy {:.4}", r.accuracy)),
    }
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> ugm_core::Result<()> {
    let model = SavedModel::load(&a.model)?;
    let dataset = Dataset::load(&a.dataset)?;
    let seq = evaluate_sequential(&dataset, &model.params)?;
    let stat = evaluate_static(&dataset, &model.params)?;
    write_report_files(&a.out, &seq, &stat)?;
    describe(out, "sequential", &seq)?;
    describe(out, "static", &stat)
}

pub fn cmd_xval(a: &XvalArgs, out: &mut dyn Write) -> ugm_core::Result<()> {
    let hyper = a.hyper.hyperparams(a.groups_list.first().copied().unwrap_or(1));
    for &k in &a.groups_list {
        a.hyper.hyperparams(k).validate()?;
    }
    let dataset = Dataset::load(&a.dataset)?;
    let cfg = XvalConfig {
        folds: a.folds,
        seed: a.hyper.seed,
        groups_list: a.groups_list.clone(),
        hyper,
        workers: a.hyper.workers,
    };
    let results = eval::cross_validate(&dataset, &cfg)?;

    create_dir(&a.out)?;
    let mut groups = Vec::with_capacity(results.len());
    for r in &results {
        write_report_files(&a.out.join(format!("k{}", r.num_groups)), &r.sequential, &r.static_)?;
        describe(out, &format!("K={} sequential", r.num_groups), &r.sequential)?;
        describe(out, &format!("K={} static", r.num_groups), &r.static_)?;
        groups.push(json!({
            "num_groups": r.num_groups,
            "fold_objectives": r.fold_objectives,
            "sequential": r.sequential,
            "static": r.static_,
        }));
    }
    let summary = json!({
        "folds": a.folds,
        "seed": a.hyper.seed,
        "aggregation": "metrics pool all predictions across users and folds (micro-averaged)",
        "entropy_unit": "nats",
        "groups": groups,
    });
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    fs::write(a.out.join("summary.json"), text)?;
    Ok(())
}

pub fn cmd_inspect(a: &InspectArgs, out: &mut dyn Write) -> ugm_core::Result<()> {
    if let Some(path) = &a.model {
        let m = SavedModel::load(path)?;
        say(
            out,
            format_args!("model: {} groups, {} features", m.params.num_groups(), m.params.feature_dim()),
        )?;
        let prior = ugm_core::mixture::group_prior(m.params.pi())?;
        for (g, w) in m.params.group_weights().iter().enumerate() {
            say(out, format_args!("group {g}: prior {:.4}", prior[g]))?;
            for (j, v) in w.as_slice().iter().enumerate() {
                let name = m.feature_names.get(j).map_or_else(|| format!("f{j}"), Clone::clone);
                say(out, format_args!("  {name}: {v:.6}"))?;
            }
        }
        if let Some(obj) = m.metadata.final_objective {
            say(out, format_args!("final objective: {obj:.6}"))?;
        }
        return Ok(());
    }
    let path = a.dataset.as_ref().expect("clap requires one of --dataset/--model");
    let d = Dataset::load(path)?;
    say(
        out,
        format_args!(
            "dataset: {} users, {} observations, {} features, task {}",
            d.users().len(),
            d.num_observations(),
            d.feature_dim(),
            serde_json::to_value(d.task())?.as_str().unwrap_or("?")
        ),
    )?;
    say(out, format_args!("longest user history: {}", d.max_history_len()))?;
    if !d.feature_names().is_empty() {
        say(out, format_args!("features: {}", d.feature_names().join(", ")))?;
    }
    Ok(())
}
