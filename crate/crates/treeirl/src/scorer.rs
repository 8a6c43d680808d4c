//! Trajectory scoring: hand-designed trajectory features, a linear score
//! model with per-feature normalization, expert-nearest labeling, and the
//! softmax + focal-loss training loop.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mcts::{Trajectory, TrajectoryPoint};
use crate::mdp::{lead_lookup, MdpConfig, PredictionTable};

pub const NUM_FEATURES: usize = 8;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "mean_abs_jerk",
    "mean_abs_accel",
    "mean_speed_deviation",
    "terminal_progress",
    "min_lead_gap",
    "clearance_violation_integral",
    "stop_distance_error",
    "overspeed_fraction",
];

/// Sentinel for the min-gap feature on lead-free trajectories (m).
pub const LEAD_FREE_GAP_SENTINEL: f64 = 1e6;

/// Cap on the stop-distance error feature so an open-road stop does not
/// produce an unbounded feature value (m).
const STOP_ERROR_CAP: f64 = 100.0;

pub type FeatureVector = [f64; NUM_FEATURES];

/// Scene quantities needed to featurize a trajectory.
pub struct FeatureContext<'a> {
    pub v_max: f64,
    pub x_max: f64,
    pub pred: &'a PredictionTable,
    pub mdp: &'a MdpConfig,
}

pub fn extract_features(traj: &Trajectory, ctx: &FeatureContext<'_>) -> FeatureVector {
    let n_points = traj.points.len() as f64;
    let n_steps = traj.steps.len() as f64;
    let mean_abs_jerk =
        traj.steps.iter().map(|s| s.effective_jerk.abs()).sum::<f64>() / n_steps.max(1.0);
    let mean_abs_accel = traj.points.iter().map(|p| p.a.abs()).sum::<f64>() / n_points;
    let mean_speed_dev =
        traj.points.iter().map(|p| (p.v - ctx.v_max).abs()).sum::<f64>() / n_points;
    let terminal_progress = traj.final_point().x - traj.points[0].x;

    let mut min_gap = f64::INFINITY;
    let mut clearance_integral = 0.0;
    for p in traj.points.iter().skip(1) {
        if let Some(lead) = lead_lookup(p.x, ctx.pred, p.t, ctx.mdp) {
            let gap = lead.x - p.x;
            min_gap = min_gap.min(gap);
            clearance_integral += ctx.mdp.dt * (ctx.mdp.delta - gap).max(0.0);
        }
    }
    if !min_gap.is_finite() {
        min_gap = LEAD_FREE_GAP_SENTINEL;
    }

    let last = traj.final_point();
    let stop_distance_error = if last.v < 0.1 {
        (ctx.x_max - last.x).abs().min(STOP_ERROR_CAP)
    } else {
        0.0
    };
    let overspeed_fraction =
        traj.points.iter().filter(|p| p.v > ctx.v_max).count() as f64 / n_points;

    [
        mean_abs_jerk,
        mean_abs_accel,
        mean_speed_dev,
        terminal_progress,
        min_gap,
        clearance_integral,
        stop_distance_error,
        overspeed_fraction,
    ]
}

/// Linear score model over normalized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub weights: FeatureVector,
    pub bias: f64,
    pub means: FeatureVector,
    pub scales: FeatureVector,
    pub gamma_focal: f64,
    pub lambda: f64,
}

impl ScoreModel {
    pub fn zeroed() -> Self {
        ScoreModel {
            weights: [0.0; NUM_FEATURES],
            bias: 0.0,
            means: [0.0; NUM_FEATURES],
            scales: [1.0; NUM_FEATURES],
            gamma_focal: 2.0,
            lambda: 0.9,
        }
    }

    pub fn normalize(&self, f: &FeatureVector) -> FeatureVector {
        let mut out = [0.0; NUM_FEATURES];
        for i in 0..NUM_FEATURES {
            out[i] = (f[i] - self.means[i]) / self.scales[i];
        }
        out
    }

    pub fn score_features(&self, f: &FeatureVector) -> f64 {
        let n = self.normalize(f);
        self.weights.iter().zip(n.iter()).map(|(w, x)| w * x).sum::<f64>() + self.bias
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("no trajectories to score")]
    Empty,
}

/// Score every candidate with the trained model.
pub fn score(features: &[FeatureVector], model: &ScoreModel) -> Vec<f64> {
    features.iter().map(|f| model.score_features(f)).collect()
}

/// Argmax of the scores, ties broken by lowest index.
pub fn select_best(scores: &[f64]) -> Result<usize, ScoreError> {
    if scores.is_empty() {
        return Err(ScoreError::Empty);
    }
    let mut best = 0;
    for (i, &z) in scores.iter().enumerate().skip(1) {
        if z > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Labeling parameters for the expert-nearest target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelConfig {
    /// Exponential decay of the per-waypoint L2 error.
    pub lambda: f64,
    /// Up-weighting of the velocity L2 term.
    pub velocity_weight: f64,
    /// Nominal car length for the 1-D collision exclusion test (m).
    pub car_length: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig { lambda: 0.9, velocity_weight: 5.0, car_length: 4.0 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("no candidate trajectories")]
    Empty,
    #[error("all candidates excluded as in collision; sample dropped")]
    AllExcluded,
}

/// Whether a trajectory overlaps the predicted body interval of any in-path
/// agent at any step.
pub fn in_collision(traj: &Trajectory, pred: &PredictionTable, car_length: f64) -> bool {
    for (j, p) in traj.points.iter().enumerate().skip(1) {
        let step = j - 1;
        for agent in &pred.agents {
            let Some(Some(a)) = agent.steps.get(step).copied() else {
                continue;
            };
            if a.in_path && p.x >= a.x - car_length && p.x <= a.x {
                return true;
            }
        }
    }
    false
}

fn weighted_l2(candidate: &[TrajectoryPoint], expert: &[TrajectoryPoint], cfg: &LabelConfig) -> f64 {
    let mut decay = 1.0;
    let mut total = 0.0;
    for (c, e) in candidate.iter().zip(expert) {
        let dx = c.x - e.x;
        let dv = c.v - e.v;
        total += decay * (dx * dx + cfg.velocity_weight * dv * dv);
        decay *= cfg.lambda;
    }
    total
}

/// Index of the candidate closest to the expert in decayed position/velocity
/// L2, after excluding candidates in collision with the predicted agents.
pub fn label_expert_nearest(
    candidates: &[Trajectory],
    expert: &[TrajectoryPoint],
    pred: &PredictionTable,
    cfg: &LabelConfig,
) -> Result<usize, LabelError> {
    if candidates.is_empty() {
        return Err(LabelError::Empty);
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, traj) in candidates.iter().enumerate() {
        if in_collision(traj, pred, cfg.car_length) {
            continue;
        }
        let d = weighted_l2(&traj.points, expert, cfg);
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i).ok_or(LabelError::AllExcluded)
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Focal loss of the labeled candidate and its analytic gradient w.r.t. the
/// scores: loss = -(1 - p*)^gamma * ln p*.
pub fn focal_loss(scores: &[f64], label: usize, gamma_focal: f64) -> (f64, Vec<f64>) {
    let probs = softmax(scores);
    let p = probs[label];
    let q = 1.0 - p;
    if q < 1e-15 {
        // Perfectly classified; both the loss and its gradient vanish.
        return (0.0, vec![0.0; scores.len()]);
    }
    let loss = -q.powf(gamma_focal) * p.ln();
    let dloss_dp = if gamma_focal == 0.0 {
        -1.0 / p
    } else {
        gamma_focal * q.powf(gamma_focal - 1.0) * p.ln() - q.powf(gamma_focal) / p
    };
    let grad = probs
        .iter()
        .enumerate()
        .map(|(i, &pi)| {
            let indicator = if i == label { 1.0 } else { 0.0 };
            dloss_dp * p * (indicator - pi)
        })
        .collect();
    (loss, grad)
}

/// One training sample: featurized candidates plus the expert-nearest label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSample {
    pub candidates: Vec<FeatureVector>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub gamma_focal: f64,
    pub lambda: f64,
    pub min_samples: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            learning_rate: 0.1,
            gamma_focal: 2.0,
            lambda: 0.9,
            min_samples: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("need at least {needed} usable samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ScoreModel,
    /// Mean training loss after each epoch.
    pub loss_curve: Vec<f64>,
}

fn fit_normalization(samples: &[TrainSample]) -> (FeatureVector, FeatureVector) {
    let mut mean = [0.0; NUM_FEATURES];
    let mut count = 0.0;
    for s in samples {
        for f in &s.candidates {
            for i in 0..NUM_FEATURES {
                mean[i] += f[i];
            }
            count += 1.0;
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    let mut var = [0.0; NUM_FEATURES];
    for s in samples {
        for f in &s.candidates {
            for i in 0..NUM_FEATURES {
                let d = f[i] - mean[i];
                var[i] += d * d;
            }
        }
    }
    let mut scale = [1.0; NUM_FEATURES];
    for i in 0..NUM_FEATURES {
        scale[i] = (var[i] / count).sqrt().max(1e-9);
    }
    (mean, scale)
}

fn mean_loss_and_grad(
    samples: &[TrainSample],
    model: &ScoreModel,
) -> (f64, FeatureVector) {
    let mut total_loss = 0.0;
    let mut grad_w = [0.0; NUM_FEATURES];
    for sample in samples {
        let normalized: Vec<FeatureVector> =
            sample.candidates.iter().map(|f| model.normalize(f)).collect();
        let scores: Vec<f64> = normalized
            .iter()
            .map(|n| {
                model.weights.iter().zip(n.iter()).map(|(w, x)| w * x).sum::<f64>() + model.bias
            })
            .collect();
        let (loss, grad_z) = focal_loss(&scores, sample.label, model.gamma_focal);
        total_loss += loss;
        for (gz, n) in grad_z.iter().zip(&normalized) {
            for i in 0..NUM_FEATURES {
                grad_w[i] += gz * n[i];
            }
        }
    }
    let count = samples.len() as f64;
    for g in &mut grad_w {
        *g /= count;
    }
    (total_loss / count, grad_w)
}

/// Full-batch gradient descent on the mean focal loss.
pub fn train(samples: &[TrainSample], cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    if samples.len() < cfg.min_samples {
        return Err(TrainError::TooFewSamples { needed: cfg.min_samples, got: samples.len() });
    }
    let (means, scales) = fit_normalization(samples);
    let mut model = ScoreModel {
        weights: [0.0; NUM_FEATURES],
        bias: 0.0,
        means,
        scales,
        gamma_focal: cfg.gamma_focal,
        lambda: cfg.lambda,
    };
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (loss, grad) = mean_loss_and_grad(samples, &model);
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }
        for i in 0..NUM_FEATURES {
            model.weights[i] -= cfg.learning_rate * grad[i];
        }
        loss_curve.push(loss);
    }
    Ok(TrainOutcome { model, loss_curve })
}

/// Mean loss of a sample set under a fixed model (for validation curves).
pub fn evaluate_loss(samples: &[TrainSample], model: &ScoreModel) -> f64 {
    mean_loss_and_grad(samples, model).0
}

/// Fraction of samples whose label lands in the model's top `k` scores.
pub fn top_k_accuracy(samples: &[TrainSample], model: &ScoreModel, k: usize) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let hits = samples
        .iter()
        .filter(|s| {
            let scores = score(&s.candidates, model);
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&a, &b| {
                scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b))
            });
            order.iter().take(k).any(|&i| i == s.label)
        })
        .count();
    hits as f64 / samples.len() as f64
}

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse model file {path}: {reason}")]
    Parse { path: String, reason: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureEntry {
    name: String,
    weight: f64,
    mean: f64,
    scale: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    gamma_focal: f64,
    lambda: f64,
    bias: f64,
    features: Vec<FeatureEntry>,
}

/// Persist the model as a plain-text key-value (TOML) file.
pub fn save_model(model: &ScoreModel, path: &Path) -> Result<(), ModelIoError> {
    let file = ModelFile {
        version: 1,
        gamma_focal: model.gamma_focal,
        lambda: model.lambda,
        bias: model.bias,
        features: (0..NUM_FEATURES)
            .map(|i| FeatureEntry {
                name: FEATURE_NAMES[i].to_string(),
                weight: model.weights[i],
                mean: model.means[i],
                scale: model.scales[i],
            })
            .collect(),
    };
    let text = toml::to_string_pretty(&file).expect("model serializes");
    fs::write(path, text).map_err(|source| ModelIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<ScoreModel, ModelIoError> {
    let text = fs::read_to_string(path).map_err(|source| ModelIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: ModelFile = toml::from_str(&text).map_err(|e| ModelIoError::Parse {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    if file.features.len() != NUM_FEATURES {
        return Err(ModelIoError::Parse {
            path: path.display().to_string(),
            reason: format!("expected {NUM_FEATURES} features, got {}", file.features.len()),
        });
    }
    let mut model = ScoreModel::zeroed();
    model.gamma_focal = file.gamma_focal;
    model.lambda = file.lambda;
    model.bias = file.bias;
    for (i, entry) in file.features.iter().enumerate() {
        if entry.name != FEATURE_NAMES[i] {
            return Err(ModelIoError::Parse {
                path: path.display().to_string(),
                reason: format!("feature {i} is '{}', expected '{}'", entry.name, FEATURE_NAMES[i]),
            });
        }
        model.weights[i] = entry.weight;
        model.means[i] = entry.mean;
        model.scales[i] = entry.scale;
    }
    Ok(model)
}

/// Persist a dataset as line-delimited JSON, one sample per line.
pub fn save_dataset(samples: &[TrainSample], path: &Path) -> Result<(), ModelIoError> {
    let mut out = Vec::new();
    for s in samples {
        serde_json::to_writer(&mut out, s).expect("sample serializes");
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|source| ModelIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_dataset(path: &Path) -> Result<Vec<TrainSample>, ModelIoError> {
    let file = fs::File::open(path).map_err(|source| ModelIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut samples = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| ModelIoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = serde_json::from_str(&line).map_err(|e| ModelIoError::Parse {
            path: path.display().to_string(),
            reason: format!("line {}: {e}", lineno + 1),
        })?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Write the per-epoch loss curve as a small CSV.
pub fn save_loss_curve(
    train_curve: &[f64],
    validation: Option<f64>,
    path: &Path,
) -> Result<(), ModelIoError> {
    let mut text = String::from("epoch,train_loss\n");
    for (i, loss) in train_curve.iter().enumerate() {
        text.push_str(&format!("{i},{loss}\n"));
    }
    if let Some(v) = validation {
        text.push_str(&format!("final_validation,{v}\n"));
    }
    let mut file = fs::File::create(path).map_err(|source| ModelIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(text.as_bytes()).map_err(|source| ModelIoError::Io {
        path: path.display().to_string(),
        source,
    })
}
