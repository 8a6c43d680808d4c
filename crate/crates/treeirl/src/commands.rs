//! Operator commands: scenario-suite generation, closed-loop simulation,
//! scorer training, latency benchmarking, and metrics reporting, plus the
//! run-manifest plumbing that makes every seeded run reproducible.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mcts::{generate, GeneratorPolicies, SearchConfig};
use crate::mdp::{init_state, MdpConfig};
use crate::metrics::{
    aggregate, compute_metrics, latency_stats, red_light_violation, write_metrics_csv,
    ComfortBounds, MetricsRow,
};
use crate::policies::{GoalAwareIdmPolicy, IdmParams, UniformPrior};
use crate::scenario::{
    build_predictions, generate_scenario_suite, load_scenario, save_scenario, snapshot_at, Family,
    Scenario, SuiteSpec,
};
use crate::scorer::{
    evaluate_loss, extract_features, label_expert_nearest, load_model, save_dataset,
    save_loss_curve, save_model, top_k_accuracy, FeatureContext, LabelConfig, LabelError,
    TrainConfig, TrainError, TrainSample,
};
use crate::sim::{
    expert_points, load_log, mix_seed, run_closed_loop, save_log, ConstantSpeedPlanner,
    ExpertPlanner, IdmPlanner, MctsPlanner, Planner, RolloutLog, TreeIrlPlanner,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    MissingArtifact(String),
    #[error("{0}")]
    Insufficient(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::MissingArtifact(_) => 3,
            CliError::Insufficient(_) => 4,
            CliError::Internal(_) => 1,
        }
    }

    fn internal(e: impl std::fmt::Display) -> CliError {
        CliError::Internal(e.to_string())
    }
}

/// Longitudinal planner evaluation and benchmarking over synthetic scenario
/// suites.
#[derive(Debug, Parser)]
#[command(name = "treeirl", version = TOOL_VERSION)]
pub struct Cli {
    /// TOML config file; sections [mdp], [search], [idm], [train] replace the
    /// built-in defaults. Command-line flags override file values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root directory prepended to relative --suite/--out paths.
    #[arg(long, global = true, env = "TREEIRL_OUTPUT_ROOT")]
    pub output_root: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic scenario suite.
    GenScenarios(GenScenariosArgs),
    /// Run a planner closed-loop over a suite; write logs and metrics.
    Simulate(SimulateArgs),
    /// Build a labeled dataset from expert drives and train the scorer.
    TrainScorer(TrainScorerArgs),
    /// Measure single-thread trajectory-generation latency over a suite.
    Benchmark(BenchmarkArgs),
    /// Recompute and aggregate metrics from existing rollout logs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenScenariosArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scenario family filter; repeatable. Default: all families, cycled.
    #[arg(long = "family")]
    pub families: Vec<Family>,
    /// Episode length (s).
    #[arg(long, default_value_t = 30.0)]
    pub duration: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// One of: cs, idm, mcts, tree-irl.
    #[arg(long, required_unless_present = "from_manifest")]
    pub planner: Option<String>,
    #[arg(long, required_unless_present = "from_manifest")]
    pub suite: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trained score model (required for tree-irl).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Search iterations override.
    #[arg(long)]
    pub iterations: Option<u32>,
    /// Candidate-count override.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Scenario-level parallelism.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Keep wall-clock latency samples in the logs (breaks byte-for-byte
    /// reproducibility of log files).
    #[arg(long, default_value_t = false)]
    pub record_latency: bool,
    /// Re-run an earlier simulate invocation from its manifest.
    #[arg(long)]
    pub from_manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainScorerArgs {
    #[arg(long)]
    pub suite: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub gamma_focal: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Ticks between consecutive training snapshots of each episode.
    #[arg(long, default_value_t = 5)]
    pub stride: usize,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub suite: PathBuf,
    /// Optional output directory for the latency sample CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<u32>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory of rollout logs (*.jsonl).
    #[arg(long)]
    pub logs: PathBuf,
    /// Directory of matching expert logs for human-likeness metrics.
    #[arg(long)]
    pub expert_logs: Option<PathBuf>,
    /// Metrics CSV output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Optional TOML configuration; a present section replaces that config whole.
#[derive(Debug, Default, Deserialize)]
pub struct FileConfig {
    pub mdp: Option<MdpConfig>,
    pub search: Option<SearchConfig>,
    pub idm: Option<IdmParams>,
    pub train: Option<TrainConfig>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| {
        CliError::MissingArtifact(format!("config file {}: {e}", path.display()))
    })?;
    toml::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config file {}: {e}", path.display())))
}

/// Everything needed to reproduce a run; written before any other output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub planner: Option<String>,
    pub suite: Option<String>,
    pub seed: u64,
    pub record_latency: bool,
    pub mdp: MdpConfig,
    pub search: SearchConfig,
    pub idm: IdmParams,
    pub suite_spec: Option<SuiteSpec>,
}

fn write_manifest(manifest: &RunManifest, out_dir: &Path) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(manifest).map_err(CliError::internal)?;
    text.push('\n');
    fs::write(out_dir.join("manifest.json"), text).map_err(CliError::internal)
}

pub fn load_manifest(path: &Path) -> Result<RunManifest, CliError> {
    let text = fs::read_to_string(path).map_err(|e| {
        CliError::MissingArtifact(format!("manifest {}: {e}", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("manifest {}: {e}", path.display())))
}

fn resolve(root: Option<&Path>, path: &Path) -> PathBuf {
    match root {
        Some(root) if path.is_relative() => root.join(path),
        _ => path.to_path_buf(),
    }
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)
        .map_err(|e| CliError::Internal(format!("creating {}: {e}", path.display())))
}

/// Read a suite directory written by gen-scenarios: an index.json listing
/// scenario files in order.
pub fn load_suite(dir: &Path) -> Result<Vec<Scenario>, CliError> {
    let index_path = dir.join("index.json");
    let text = fs::read_to_string(&index_path).map_err(|e| {
        CliError::MissingArtifact(format!("suite index {}: {e}", index_path.display()))
    })?;
    let names: Vec<String> = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("suite index {}: {e}", index_path.display())))?;
    names
        .iter()
        .map(|name| load_scenario(&dir.join(name)).map_err(CliError::internal))
        .collect()
}

pub fn cmd_gen_scenarios(args: &GenScenariosArgs, root: Option<&Path>) -> Result<(), CliError> {
    let out = resolve(root, &args.out);
    ensure_dir(&out)?;
    let spec = SuiteSpec {
        count: args.count,
        families: if args.families.is_empty() {
            Family::ALL.to_vec()
        } else {
            args.families.clone()
        },
        duration: args.duration,
    };
    if !(args.duration > 0.0) {
        return Err(CliError::Usage(format!(
            "--duration must be positive, got {}",
            args.duration
        )));
    }
    write_manifest(
        &RunManifest {
            tool_version: TOOL_VERSION.to_string(),
            command: "gen-scenarios".to_string(),
            planner: None,
            suite: None,
            seed: args.seed,
            record_latency: false,
            mdp: MdpConfig::default(),
            search: SearchConfig::default(),
            idm: IdmParams::default(),
            suite_spec: Some(spec.clone()),
        },
        &out,
    )?;
    let scenarios = generate_scenario_suite(args.seed, &spec);
    let mut names = Vec::with_capacity(scenarios.len());
    for sc in &scenarios {
        let name = format!("{}.json", sc.id);
        save_scenario(sc, &out.join(&name)).map_err(CliError::internal)?;
        names.push(name);
    }
    let mut index = serde_json::to_string_pretty(&names).map_err(CliError::internal)?;
    index.push('\n');
    fs::write(out.join("index.json"), index).map_err(CliError::internal)?;
    println!("wrote {} scenarios to {}", scenarios.len(), out.display());
    Ok(())
}

struct SimSetup {
    planner_name: String,
    suite_path: PathBuf,
    seed: u64,
    record_latency: bool,
    mdp: MdpConfig,
    search: SearchConfig,
    idm: IdmParams,
}

fn build_planner(setup: &SimSetup, model_path: Option<&Path>) -> Result<Box<dyn Planner>, CliError> {
    match setup.planner_name.as_str() {
        "cs" => Ok(Box::new(ConstantSpeedPlanner { mdp: setup.mdp })),
        "idm" => Ok(Box::new(IdmPlanner::new(setup.mdp))),
        "mcts" => Ok(Box::new(MctsPlanner::new(setup.mdp, setup.search))),
        "tree-irl" => {
            let path = model_path.ok_or_else(|| {
                CliError::MissingArtifact(
                    "planner tree-irl requires --model <score model file>".to_string(),
                )
            })?;
            let model = load_model(path).map_err(|e| CliError::MissingArtifact(e.to_string()))?;
            Ok(Box::new(TreeIrlPlanner::new(setup.mdp, setup.search, model)))
        }
        other => Err(CliError::Usage(format!(
            "unknown planner '{other}' (expected cs, idm, mcts, or tree-irl)"
        ))),
    }
}

fn run_pool<T: Send>(
    jobs: usize,
    work: impl Fn() -> Result<T, CliError> + Send,
) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(CliError::internal)?;
    pool.install(work)
}

pub fn cmd_simulate(
    args: &SimulateArgs,
    file_cfg: &FileConfig,
    root: Option<&Path>,
) -> Result<(), CliError> {
    let setup = if let Some(manifest_path) = &args.from_manifest {
        let manifest = load_manifest(&resolve(root, manifest_path))?;
        if manifest.command != "simulate" {
            return Err(CliError::Usage(format!(
                "manifest describes a '{}' run, not simulate",
                manifest.command
            )));
        }
        SimSetup {
            planner_name: manifest.planner.clone().ok_or_else(|| {
                CliError::Usage("manifest has no planner field".to_string())
            })?,
            suite_path: PathBuf::from(manifest.suite.clone().ok_or_else(|| {
                CliError::Usage("manifest has no suite field".to_string())
            })?),
            seed: manifest.seed,
            record_latency: manifest.record_latency,
            mdp: manifest.mdp,
            search: manifest.search,
            idm: manifest.idm,
        }
    } else {
        let mut search = file_cfg.search.unwrap_or_default();
        if let Some(n) = args.iterations {
            search.iterations = n;
        }
        if let Some(k) = args.top_k {
            search.top_k = k;
        }
        SimSetup {
            planner_name: args.planner.clone().expect("clap enforces planner"),
            suite_path: resolve(root, args.suite.as_ref().expect("clap enforces suite")),
            seed: args.seed,
            record_latency: args.record_latency,
            mdp: file_cfg.mdp.unwrap_or_default(),
            search,
            idm: file_cfg.idm.unwrap_or_default(),
        }
    };
    let planner = build_planner(&setup, args.model.as_deref().map(|p| resolve(root, p)).as_deref())?;
    let scenarios = load_suite(&setup.suite_path)?;
    let out = resolve(root, &args.out);
    let logs_dir = out.join("logs");
    ensure_dir(&logs_dir)?;
    write_manifest(
        &RunManifest {
            tool_version: TOOL_VERSION.to_string(),
            command: "simulate".to_string(),
            planner: Some(setup.planner_name.clone()),
            suite: Some(setup.suite_path.display().to_string()),
            seed: setup.seed,
            record_latency: setup.record_latency,
            mdp: setup.mdp,
            search: setup.search,
            idm: setup.idm,
            suite_spec: None,
        },
        &out,
    )?;
    let bounds = ComfortBounds::default();
    let mdp = setup.mdp;
    let seed = setup.seed;
    let planner_ref: &dyn Planner = planner.as_ref();
    let results: Vec<(RolloutLog, MetricsRow)> = run_pool(args.jobs, || {
        scenarios
            .par_iter()
            .enumerate()
            .map(|(i, sc)| {
                let log = run_closed_loop(sc, planner_ref, &mdp, mix_seed(seed, i as u64))
                    .map_err(CliError::internal)?;
                let expert = run_closed_loop(sc, &ExpertPlanner::new(mdp), &mdp, 0)
                    .map_err(CliError::internal)?;
                let mut row = compute_metrics(&log, Some(&expert), &bounds);
                row.red_light_violation = sc
                    .traffic_light
                    .as_ref()
                    .map(|light| red_light_violation(&log, light));
                Ok((log, row))
            })
            .collect()
    })?;
    let mut rows = Vec::with_capacity(results.len());
    for (log, row) in &results {
        save_log(log, &logs_dir.join(format!("{}.jsonl", log.scenario_id)), setup.record_latency)
            .map_err(CliError::internal)?;
        if let Some(failure) = &log.failure {
            eprintln!("scenario {}: planner failed: {failure}", log.scenario_id);
        }
        rows.push(row.clone());
    }
    write_metrics_csv(&rows, &out.join("metrics.csv")).map_err(CliError::internal)?;
    let summary = aggregate(&setup.planner_name, &rows);
    println!(
        "{}: {} episodes, {} completed, {} collisions, comfort pass rate {:.2}, \
         mean progress {:.1} m",
        summary.planner,
        summary.episodes,
        summary.completed,
        summary.total_collisions,
        summary.comfort_pass_rate,
        summary.mean_progress
    );
    Ok(())
}

/// Build the labeled dataset for one scenario of the training suite.
fn scenario_samples(
    sc: &Scenario,
    mdp: &MdpConfig,
    search: &SearchConfig,
    stride: usize,
    seed: u64,
) -> Result<Vec<TrainSample>, CliError> {
    let expert = run_closed_loop(sc, &ExpertPlanner::new(*mdp), mdp, 0)
        .map_err(CliError::internal)?;
    if expert.failure.is_some() {
        return Ok(Vec::new());
    }
    let support = GoalAwareIdmPolicy::new(IdmParams::default(), f64::INFINITY);
    let label_cfg = LabelConfig::default();
    let mut samples = Vec::new();
    let mut k = 0;
    while let Some(target) = expert_points(&expert, k, mdp) {
        let tick = &expert.ticks[k];
        let snap = snapshot_at(sc, tick.t, tick.x, tick.v, tick.a).map_err(CliError::internal)?;
        let pred = build_predictions(sc, tick.t, mdp);
        let cfg = SearchConfig { seed: mix_seed(seed, k as u64), ..*search };
        let trajs = match generate(
            &snap,
            &pred,
            mdp,
            &cfg,
            &GeneratorPolicies { prior: &UniformPrior, rollout: &support, padding: &support },
        ) {
            Ok(trajs) => trajs,
            Err(_) => {
                k += stride;
                continue;
            }
        };
        match label_expert_nearest(&trajs, &target, &pred, &label_cfg) {
            Ok(label) => {
                let root = init_state(&snap, mdp).map_err(CliError::internal)?;
                let ctx =
                    FeatureContext { v_max: snap.v_max, x_max: root.x_max, pred: &pred, mdp };
                samples.push(TrainSample {
                    candidates: trajs.iter().map(|t| extract_features(t, &ctx)).collect(),
                    label,
                });
            }
            Err(LabelError::AllExcluded) | Err(LabelError::Empty) => {}
        }
        k += stride;
    }
    Ok(samples)
}

pub fn cmd_train_scorer(
    args: &TrainScorerArgs,
    file_cfg: &FileConfig,
    root: Option<&Path>,
) -> Result<(), CliError> {
    let mdp = file_cfg.mdp.unwrap_or_default();
    let search = file_cfg.search.unwrap_or_default();
    let mut train_cfg = file_cfg.train.unwrap_or_default();
    if let Some(epochs) = args.epochs {
        train_cfg.epochs = epochs;
    }
    if let Some(gamma) = args.gamma_focal {
        train_cfg.gamma_focal = gamma;
    }
    if let Some(lr) = args.learning_rate {
        train_cfg.learning_rate = lr;
    }
    train_cfg.seed = args.seed;
    if args.stride == 0 {
        return Err(CliError::Usage("--stride must be at least 1".to_string()));
    }
    let suite_path = resolve(root, &args.suite);
    let scenarios = load_suite(&suite_path)?;
    let out = resolve(root, &args.out);
    ensure_dir(&out)?;
    write_manifest(
        &RunManifest {
            tool_version: TOOL_VERSION.to_string(),
            command: "train-scorer".to_string(),
            planner: None,
            suite: Some(suite_path.display().to_string()),
            seed: args.seed,
            record_latency: false,
            mdp,
            search,
            idm: IdmParams::default(),
            suite_spec: None,
        },
        &out,
    )?;
    let per_scenario: Vec<Vec<TrainSample>> = run_pool(args.jobs, || {
        scenarios
            .par_iter()
            .enumerate()
            .map(|(i, sc)| {
                scenario_samples(sc, &mdp, &search, args.stride, mix_seed(args.seed, i as u64))
            })
            .collect()
    })?;
    let all: Vec<TrainSample> = per_scenario.into_iter().flatten().collect();
    // Deterministic 90/10 split by sample index.
    let mut train_set = Vec::new();
    let mut val_set = Vec::new();
    for (i, s) in all.iter().enumerate() {
        if i % 10 == 9 {
            val_set.push(s.clone());
        } else {
            train_set.push(s.clone());
        }
    }
    save_dataset(&all, &out.join("dataset.jsonl")).map_err(CliError::internal)?;
    let outcome = crate::scorer::train(&train_set, &train_cfg).map_err(|e| match e {
        TrainError::TooFewSamples { .. } => CliError::Insufficient(e.to_string()),
        TrainError::NonFiniteLoss { .. } => CliError::Internal(e.to_string()),
    })?;
    let validation = if val_set.is_empty() {
        None
    } else {
        Some(evaluate_loss(&val_set, &outcome.model))
    };
    save_model(&outcome.model, &out.join("model.toml")).map_err(CliError::internal)?;
    save_loss_curve(&outcome.loss_curve, validation, &out.join("loss_curve.csv"))
        .map_err(CliError::internal)?;
    println!(
        "trained on {} samples ({} held out): train top-1 {:.3}, top-5 {:.3}{}",
        train_set.len(),
        val_set.len(),
        top_k_accuracy(&train_set, &outcome.model, 1),
        top_k_accuracy(&train_set, &outcome.model, 5),
        validation.map_or(String::new(), |v| format!(", validation loss {v:.6}")),
    );
    Ok(())
}

/// Time one trajectory generation per scenario on a single thread.
pub fn cmd_benchmark(
    args: &BenchmarkArgs,
    file_cfg: &FileConfig,
    root: Option<&Path>,
) -> Result<(), CliError> {
    let mdp = file_cfg.mdp.unwrap_or_default();
    let mut search = file_cfg.search.unwrap_or_default();
    if let Some(n) = args.iterations {
        search.iterations = n;
    }
    if let Some(k) = args.top_k {
        search.top_k = k;
    }
    let scenarios = load_suite(&resolve(root, &args.suite))?;
    if scenarios.is_empty() {
        return Err(CliError::Insufficient("benchmark suite is empty".to_string()));
    }
    let support = GoalAwareIdmPolicy::new(file_cfg.idm.unwrap_or_default(), f64::INFINITY);
    let mut samples_ms = Vec::with_capacity(scenarios.len());
    for (i, sc) in scenarios.iter().enumerate() {
        let snap = snapshot_at(sc, 0.0, sc.ego.x, sc.ego.v, sc.ego.a)
            .map_err(CliError::internal)?;
        let pred = build_predictions(sc, 0.0, &mdp);
        let cfg = SearchConfig { seed: mix_seed(args.seed, i as u64), ..search };
        let started = std::time::Instant::now();
        generate(
            &snap,
            &pred,
            &mdp,
            &cfg,
            &GeneratorPolicies { prior: &UniformPrior, rollout: &support, padding: &support },
        )
        .map_err(CliError::internal)?;
        samples_ms.push(started.elapsed().as_secs_f64() * 1e3);
    }
    let stats = latency_stats(&samples_ms);
    let n = samples_ms.len() as f64;
    let sd = (samples_ms.iter().map(|s| (s - stats.mean_ms).powi(2)).sum::<f64>() / n).sqrt();
    println!(
        "trajectory generation (n = {}, k = {}): {:.2} \u{00b1} {:.2} ms over {} scenarios",
        search.iterations, search.top_k, stats.mean_ms, sd, samples_ms.len()
    );
    println!("{}", stats.table());
    if let Some(out) = &args.out {
        let out = resolve(root, out);
        ensure_dir(&out)?;
        let mut csv = String::from("scenario_index,latency_ms\n");
        for (i, s) in samples_ms.iter().enumerate() {
            csv.push_str(&format!("{i},{s}\n"));
        }
        fs::write(out.join("latency.csv"), csv).map_err(CliError::internal)?;
    }
    Ok(())
}

pub fn cmd_report(args: &ReportArgs, root: Option<&Path>) -> Result<(), CliError> {
    let logs_dir = resolve(root, &args.logs);
    let mut names: Vec<String> = fs::read_dir(&logs_dir)
        .map_err(|e| {
            CliError::MissingArtifact(format!("log directory {}: {e}", logs_dir.display()))
        })?
        .filter_map(|entry| {
            let name = entry.ok()?.file_name().into_string().ok()?;
            name.ends_with(".jsonl").then_some(name)
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(CliError::Insufficient(format!(
            "no rollout logs (*.jsonl) in {}",
            logs_dir.display()
        )));
    }
    let bounds = ComfortBounds::default();
    let mut rows = Vec::new();
    for name in &names {
        let log = load_log(&logs_dir.join(name)).map_err(CliError::internal)?;
        let expert = match &args.expert_logs {
            Some(dir) => {
                let path = resolve(root, dir).join(name);
                path.exists().then(|| load_log(&path)).transpose().map_err(CliError::internal)?
            }
            None => None,
        };
        rows.push(compute_metrics(&log, expert.as_ref(), &bounds));
    }
    if let Some(out) = &args.out {
        write_metrics_csv(&rows, &resolve(root, out)).map_err(CliError::internal)?;
    }
    let mut planners: Vec<String> = rows.iter().map(|r| r.planner.clone()).collect();
    planners.sort();
    planners.dedup();
    for planner in planners {
        let group: Vec<MetricsRow> =
            rows.iter().filter(|r| r.planner == planner).cloned().collect();
        let s = aggregate(&planner, &group);
        println!(
            "{}: {} episodes, {} collisions, comfort pass rate {:.2}, mean max |jerk| \
             {:.2} m/s^3, mean progress {:.1} m",
            s.planner,
            s.episodes,
            s.total_collisions,
            s.comfort_pass_rate,
            s.mean_max_abs_jerk,
            s.mean_progress
        );
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file_cfg = load_file_config(cli.config.as_deref())?;
    let root = cli.output_root.as_deref();
    match &cli.command {
        Command::GenScenarios(args) => cmd_gen_scenarios(args, root),
        Command::Simulate(args) => cmd_simulate(args, &file_cfg, root),
        Command::TrainScorer(args) => cmd_train_scorer(args, &file_cfg, root),
        Command::Benchmark(args) => cmd_benchmark(args, &file_cfg, root),
        Command::Report(args) => cmd_report(args, root),
    }
}
