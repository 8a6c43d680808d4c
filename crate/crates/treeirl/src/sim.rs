//! Closed-loop simulation: planner interface, the four planner variants,
//! 10 Hz log-playback episodes with perfect tracking of the planned jerk, and
//! rollout-log persistence.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mcts::{generate, GeneratorPolicies, SearchConfig, SearchError, Trajectory, TrajectoryPoint};
use crate::mdp::{init_state, MdpConfig, PredictionTable, SceneSnapshot};
use crate::policies::{GoalAwareIdmPolicy, IdmParams, ConstantSpeedPolicy, UniformPrior};
use crate::scenario::{
    build_predictions, snapshot_at, step_world, AgentInstant, Scenario, ScenarioError, TRACE_DT,
};
use crate::scorer::{extract_features, score, select_best, FeatureContext, ScoreError, ScoreModel};

/// Episode prefix excluded from metrics while the ego settles (s).
pub const WARMUP_DURATION: f64 = 4.0;

/// Jerk cap of the synthetic expert driver (m/s^3), just inside the comfort
/// bound used by the metrics.
pub const EXPERT_JERK_LIMIT: f64 = 4.0;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

/// The planner's answer for one tick.
#[derive(Debug, Clone)]
pub struct PlanOutput {
    pub trajectory: Trajectory,
    /// Model score of the selected trajectory, where a scorer is in play.
    pub score: Option<f64>,
    /// Number of candidates the selection considered.
    pub candidates: usize,
}

/// A longitudinal planner invoked once per simulation tick.
pub trait Planner: Sync {
    fn name(&self) -> &str;
    fn plan(
        &self,
        snap: &SceneSnapshot,
        pred: &PredictionTable,
        seed: u64,
    ) -> Result<PlanOutput, PlanError>;
}

fn single_padded_plan(
    snap: &SceneSnapshot,
    pred: &PredictionTable,
    mdp: &MdpConfig,
    padding: &dyn crate::policies::AccelPolicy,
) -> Result<PlanOutput, PlanError> {
    let cfg = SearchConfig { iterations: 0, top_k: 1, ..SearchConfig::default() };
    let mut trajs = generate(
        snap,
        pred,
        mdp,
        &cfg,
        &GeneratorPolicies { prior: &UniformPrior, rollout: padding, padding },
    )?;
    Ok(PlanOutput { trajectory: trajs.remove(0), score: None, candidates: 1 })
}

/// Holds the current speed for the rest of the horizon.
pub struct ConstantSpeedPlanner {
    pub mdp: MdpConfig,
}

impl Planner for ConstantSpeedPlanner {
    fn name(&self) -> &str {
        "cs"
    }

    fn plan(
        &self,
        snap: &SceneSnapshot,
        pred: &PredictionTable,
        _seed: u64,
    ) -> Result<PlanOutput, PlanError> {
        single_padded_plan(snap, pred, &self.mdp, &ConstantSpeedPolicy)
    }
}

/// Reactive IDM car following (goal-aware, no search).
pub struct IdmPlanner {
    pub mdp: MdpConfig,
    policy: GoalAwareIdmPolicy,
}

impl IdmPlanner {
    pub fn new(mdp: MdpConfig) -> Self {
        let policy = GoalAwareIdmPolicy::new(IdmParams::default(), f64::INFINITY);
        IdmPlanner { mdp, policy }
    }
}

impl Planner for IdmPlanner {
    fn name(&self) -> &str {
        "idm"
    }

    fn plan(
        &self,
        snap: &SceneSnapshot,
        pred: &PredictionTable,
        _seed: u64,
    ) -> Result<PlanOutput, PlanError> {
        single_padded_plan(snap, pred, &self.mdp, &self.policy)
    }
}

/// Tree search executing its most-visited trajectory directly (k = 1).
pub struct MctsPlanner {
    pub mdp: MdpConfig,
    pub search: SearchConfig,
    support: GoalAwareIdmPolicy,
}

impl MctsPlanner {
    pub fn new(mdp: MdpConfig, search: SearchConfig) -> Self {
        let support = GoalAwareIdmPolicy::new(IdmParams::default(), f64::INFINITY);
        MctsPlanner { mdp, search: SearchConfig { top_k: 1, ..search }, support }
    }
}

impl Planner for MctsPlanner {
    fn name(&self) -> &str {
        "mcts"
    }

    fn plan(
        &self,
        snap: &SceneSnapshot,
        pred: &PredictionTable,
        seed: u64,
    ) -> Result<PlanOutput, PlanError> {
        let cfg = SearchConfig { seed, ..self.search };
        let mut trajs = generate(
            snap,
            pred,
            &self.mdp,
            &cfg,
            &GeneratorPolicies {
                prior: &UniformPrior,
                rollout: &self.support,
                padding: &self.support,
            },
        )?;
        Ok(PlanOutput { trajectory: trajs.remove(0), score: None, candidates: 1 })
    }
}

/// Tree search proposing top-k candidates, selected by the learned scorer.
pub struct TreeIrlPlanner {
    pub mdp: MdpConfig,
    pub search: SearchConfig,
    pub model: ScoreModel,
    support: GoalAwareIdmPolicy,
}

impl TreeIrlPlanner {
    pub fn new(mdp: MdpConfig, search: SearchConfig, model: ScoreModel) -> Self {
        let support = GoalAwareIdmPolicy::new(IdmParams::default(), f64::INFINITY);
        TreeIrlPlanner { mdp, search, model, support }
    }
}

impl Planner for TreeIrlPlanner {
    fn name(&self) -> &str {
        "tree-irl"
    }

    fn plan(
        &self,
        snap: &SceneSnapshot,
        pred: &PredictionTable,
        seed: u64,
    ) -> Result<PlanOutput, PlanError> {
        let cfg = SearchConfig { seed, ..self.search };
        let trajs = generate(
            snap,
            pred,
            &self.mdp,
            &cfg,
            &GeneratorPolicies {
                prior: &UniformPrior,
                rollout: &self.support,
                padding: &self.support,
            },
        )?;
        let root = init_state(snap, &self.mdp).map_err(SearchError::from)?;
        let ctx = FeatureContext { v_max: snap.v_max, x_max: root.x_max, pred, mdp: &self.mdp };
        let features: Vec<_> = trajs.iter().map(|t| extract_features(t, &ctx)).collect();
        let scores = score(&features, &self.model);
        let best = select_best(&scores)?;
        Ok(PlanOutput {
            trajectory: trajs[best].clone(),
            score: Some(scores[best]),
            candidates: trajs.len(),
        })
    }
}

/// The synthetic expert: comfort-tuned goal-aware IDM with a jerk cap. Its
/// rollouts provide the imitation targets for scorer training.
pub struct ExpertPlanner {
    pub mdp: MdpConfig,
    policy: GoalAwareIdmPolicy,
}

impl ExpertPlanner {
    pub fn new(mdp: MdpConfig) -> Self {
        let policy = GoalAwareIdmPolicy::new(IdmParams::comfort(), EXPERT_JERK_LIMIT);
        ExpertPlanner { mdp, policy }
    }
}

impl Planner for ExpertPlanner {
    fn name(&self) -> &str {
        "expert"
    }

    fn plan(
        &self,
        snap: &SceneSnapshot,
        pred: &PredictionTable,
        _seed: u64,
    ) -> Result<PlanOutput, PlanError> {
        single_padded_plan(snap, pred, &self.mdp, &self.policy)
    }
}

/// One simulation tick: the pre-execution ego state at `t` plus the executed
/// jerk and the replayed agent states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t: f64,
    pub x: f64,
    pub v: f64,
    pub a: f64,
    /// Effective jerk executed from `t` to `t + 0.1`.
    pub jerk: f64,
    pub score: Option<f64>,
    /// Planning wall time (ms); stripped from logs unless explicitly kept.
    pub latency_ms: Option<f64>,
    pub warmup: bool,
    pub agents: Vec<Option<AgentInstant>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutLog {
    pub scenario_id: String,
    pub planner: String,
    pub v_max: f64,
    pub warmup: f64,
    /// Set when the planner aborted; the log is truncated at that tick.
    pub failure: Option<String>,
    pub ticks: Vec<TickRecord>,
}

/// SplitMix64; decorrelates per-tick search seeds from the run seed.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Execute a jerk command for one 0.1 s tick with the same kinematics as the
/// planning transition: acceleration clamped, speed and position floored.
pub fn execute_tick(x: f64, v: f64, a: f64, jerk_cmd: f64, mdp: &MdpConfig) -> (f64, f64, f64) {
    let dt = TRACE_DT;
    let a_next = mdp.clip_accel(a + jerk_cmd * dt);
    let j = (a_next - a) / dt;
    let v_next = (v + a * dt + 0.5 * j * dt * dt).max(0.0);
    let x_next = (x + v * dt + 0.5 * a * dt * dt + j * dt * dt * dt / 6.0).max(x);
    (x_next, v_next, a_next)
}

/// Run one closed-loop episode: replan every tick at 10 Hz and execute the
/// first 0.1 s of each plan with perfect tracking.
pub fn run_closed_loop(
    scenario: &Scenario,
    planner: &dyn Planner,
    mdp: &MdpConfig,
    seed: u64,
) -> Result<RolloutLog, ScenarioError> {
    let n_ticks = (scenario.duration / TRACE_DT).round() as usize;
    let mut log = RolloutLog {
        scenario_id: scenario.id.clone(),
        planner: planner.name().to_string(),
        v_max: scenario.v_max,
        warmup: WARMUP_DURATION,
        failure: None,
        ticks: Vec::with_capacity(n_ticks),
    };
    let mut x = scenario.ego.x;
    let mut v = scenario.ego.v;
    let mut a = scenario.ego.a;
    for k in 0..n_ticks {
        let t = k as f64 * TRACE_DT;
        let agents = step_world(scenario, t)?;
        let snap = snapshot_at(scenario, t, x, v, a)?;
        let pred = build_predictions(scenario, t, mdp);
        let started = Instant::now();
        let plan = planner.plan(&snap, &pred, mix_seed(seed, k as u64));
        let latency_ms = started.elapsed().as_secs_f64() * 1e3;
        let plan = match plan {
            Ok(plan) => plan,
            Err(e) => {
                log.failure = Some(format!("tick {k} (t = {t:.1} s): {e}"));
                break;
            }
        };
        let jerk = plan.trajectory.steps.first().map_or(0.0, |s| s.effective_jerk);
        log.ticks.push(TickRecord {
            t,
            x,
            v,
            a,
            jerk,
            score: plan.score,
            latency_ms: Some(latency_ms),
            warmup: t < WARMUP_DURATION,
            agents,
        });
        let (xn, vn, an) = execute_tick(x, v, a, jerk, mdp);
        x = xn;
        v = vn;
        a = an;
    }
    Ok(log)
}

/// Resample the expert rollout onto the planning grid starting at tick
/// `start`: positions/speeds every 0.5 s for the full horizon, with times
/// relative to the start tick. `None` when the log is too short.
pub fn expert_points(log: &RolloutLog, start: usize, mdp: &MdpConfig) -> Option<Vec<TrajectoryPoint>> {
    let stride = (mdp.dt / TRACE_DT).round() as usize;
    let n = mdp.steps();
    let mut points = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let tick = log.ticks.get(start + i * stride)?;
        points.push(TrajectoryPoint {
            t: i as f64 * mdp.dt,
            x: tick.x,
            v: tick.v,
            a: tick.a,
        });
    }
    Some(points)
}

#[derive(Debug, Error)]
pub enum LogIoError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse log {path}: {reason}")]
    Parse { path: String, reason: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct LogHeader {
    scenario_id: String,
    planner: String,
    v_max: f64,
    warmup: f64,
    failure: Option<String>,
}

/// Write a rollout log as line-delimited JSON: a header line followed by one
/// line per tick. Latency is stripped unless `record_latency` is set, keeping
/// repeated runs byte-identical.
pub fn save_log(log: &RolloutLog, path: &Path, record_latency: bool) -> Result<(), LogIoError> {
    let header = LogHeader {
        scenario_id: log.scenario_id.clone(),
        planner: log.planner.clone(),
        v_max: log.v_max,
        warmup: log.warmup,
        failure: log.failure.clone(),
    };
    let mut out = Vec::new();
    serde_json::to_writer(&mut out, &header).expect("header serializes");
    out.push(b'\n');
    for tick in &log.ticks {
        if record_latency {
            serde_json::to_writer(&mut out, tick).expect("tick serializes");
        } else {
            let stripped = TickRecord { latency_ms: None, ..tick.clone() };
            serde_json::to_writer(&mut out, &stripped).expect("tick serializes");
        }
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|source| LogIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_log(path: &Path) -> Result<RolloutLog, LogIoError> {
    let file = fs::File::open(path).map_err(|source| LogIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| LogIoError::Parse {
            path: path.display().to_string(),
            reason: "empty log file".to_string(),
        })?
        .map_err(|source| LogIoError::Io { path: path.display().to_string(), source })?;
    let header: LogHeader =
        serde_json::from_str(&header_line).map_err(|e| LogIoError::Parse {
            path: path.display().to_string(),
            reason: format!("header: {e}"),
        })?;
    let mut ticks = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|source| LogIoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let tick = serde_json::from_str(&line).map_err(|e| LogIoError::Parse {
            path: path.display().to_string(),
            reason: format!("line {}: {e}", lineno + 2),
        })?;
        ticks.push(tick);
    }
    Ok(RolloutLog {
        scenario_id: header.scenario_id,
        planner: header.planner,
        v_max: header.v_max,
        warmup: header.warmup,
        failure: header.failure,
        ticks,
    })
}
