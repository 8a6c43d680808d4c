//! The longitudinal driving MDP: state, jerk action, deterministic kinematic
//! transition, reward, termination, and initial-state construction.
//!
//! All quantities are projected onto the reference path, so the world is
//! strictly 1-D: positions are longitudinal offsets in meters, speeds in m/s,
//! accelerations in m/s^2, jerk in m/s^3.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Kinematics of the lead agent, projected onto the reference path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeadState {
    pub x: f64,
    pub v: f64,
    pub a: f64,
}

/// One state of the longitudinal MDP.
///
/// `x_max` is the maximum longitudinal offset (goal or a red-light stop line)
/// and `v_max` the speed limit; both are constant across transitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongState {
    pub x_ego: f64,
    pub v_ego: f64,
    pub a_ego: f64,
    pub lead: Option<LeadState>,
    /// Time offset within the planning horizon, a multiple of `dt`.
    pub t: f64,
    pub x_max: f64,
    pub v_max: f64,
}

/// Longitudinal jerk command, one of {-2, -1, 0, 1, 2} m/s^3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JerkAction(i8);

impl JerkAction {
    pub const ALL: [JerkAction; 5] = [
        JerkAction(-2),
        JerkAction(-1),
        JerkAction(0),
        JerkAction(1),
        JerkAction(2),
    ];

    pub fn new(jerk: i8) -> Option<Self> {
        if (-2..=2).contains(&jerk) {
            Some(JerkAction(jerk))
        } else {
            None
        }
    }

    pub fn from_index(index: usize) -> Self {
        Self::ALL[index]
    }

    pub fn index(self) -> usize {
        (self.0 + 2) as usize
    }

    pub fn jerk(self) -> f64 {
        f64::from(self.0)
    }
}

/// Weights of the cost terms in the reward function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub jerk: f64,
    pub accel: f64,
    pub speed: f64,
    pub collision: f64,
    pub clearance: f64,
    pub stop: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            jerk: 0.05,
            accel: 0.2,
            speed: 0.1,
            collision: 10.0,
            clearance: 10.0,
            stop: 0.1,
        }
    }
}

/// Configuration of the longitudinal MDP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdpConfig {
    /// Planning time step (s).
    pub dt: f64,
    /// Planning horizon (s); a multiple of `dt`.
    pub horizon: f64,
    /// Discount factor.
    pub gamma: f64,
    pub accel_min: f64,
    pub accel_max: f64,
    /// Reward scaling factor.
    pub alpha: f64,
    /// Clearance buffer (m): 2 for evaluation, 1 for training.
    pub delta: f64,
    pub weights: RewardWeights,
    /// Speed below which the ego counts as stopped for the buffer terms (m/s).
    pub stop_speed_epsilon: f64,
    /// Negate the stop-buffer cost terms. As written they add a positive cost
    /// inside the desired stopping band; this flag flips the sign without
    /// changing the default behavior.
    pub negate_stop_term: bool,
}

impl Default for MdpConfig {
    fn default() -> Self {
        MdpConfig {
            dt: 0.5,
            horizon: 8.0,
            gamma: 0.99,
            accel_min: -7.0,
            accel_max: 2.0,
            alpha: 1.0 / 30.0,
            delta: 2.0,
            weights: RewardWeights::default(),
            stop_speed_epsilon: 0.1,
            negate_stop_term: false,
        }
    }
}

impl MdpConfig {
    /// Number of transitions from t = 0 to the horizon.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn clip_accel(&self, a: f64) -> f64 {
        a.clamp(self.accel_min, self.accel_max)
    }
}

/// Predicted agent kinematics at one future timestep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedStep {
    pub x: f64,
    pub v: f64,
    /// Whether the agent is predicted within 2 m laterally of the reference path.
    pub in_path: bool,
}

/// Predictions for one agent on the MDP time grid.
///
/// Entry `i` holds the prediction at t = (i + 1) * dt; `None` marks steps at
/// which the agent is absent (e.g. a cut-in before its insertion time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentPrediction {
    pub steps: Vec<Option<PredictedStep>>,
}

/// Per-agent predictions over the planning horizon, aligned to the MDP grid.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionTable {
    pub agents: Vec<AgentPrediction>,
}

impl PredictionTable {
    pub fn empty() -> Self {
        PredictionTable { agents: Vec::new() }
    }
}

/// Current-time view of one agent, used for initial-state construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub x: f64,
    pub v: f64,
    pub a: f64,
    pub in_path: bool,
}

/// Everything the planner needs from the scene at the current time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSnapshot {
    pub ego_x: f64,
    pub ego_v: f64,
    pub ego_a: f64,
    /// Lateral offset of the ego from the reference path (m).
    pub ego_lateral_offset: f64,
    pub agents: Vec<AgentSnapshot>,
    /// Goal offset along the reference path (m).
    pub goal: f64,
    pub v_max: f64,
    /// Stop line of the closest red/yellow traffic light ahead, if any.
    pub stop_light: Option<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum MdpError {
    #[error("transition from a terminal state (t = {t} s)")]
    TerminalState { t: f64 },
    #[error("ego is {offset} m off the reference path (tolerance {tolerance} m)")]
    EgoOffPath { offset: f64, tolerance: f64 },
}

/// Lateral tolerance for both lead lookup and ego-on-path validation (m).
pub const LATERAL_TOLERANCE: f64 = 2.0;

fn prediction_index(t_next: f64, cfg: &MdpConfig) -> usize {
    debug_assert!(t_next > 0.0);
    (t_next / cfg.dt).round() as usize - 1
}

fn lead_accel(agent: &AgentPrediction, step: usize, cfg: &MdpConfig) -> f64 {
    // Finite-difference the predicted speeds; 0 at the first step or across
    // an absence gap. Nothing downstream consumes lead accel, but the state
    // carries it.
    let cur = match agent.steps[step] {
        Some(s) => s,
        None => return 0.0,
    };
    if step == 0 {
        return 0.0;
    }
    match agent.steps[step - 1] {
        Some(prev) => (cur.v - prev.v) / cfg.dt,
        None => 0.0,
    }
}

/// Look up the lead agent at time `t_next`: the closest agent predicted
/// strictly ahead of `x_ego_next` and within 2 m of the reference path.
pub fn lead_lookup(
    x_ego_next: f64,
    pred: &PredictionTable,
    t_next: f64,
    cfg: &MdpConfig,
) -> Option<LeadState> {
    let step = prediction_index(t_next, cfg);
    let mut best: Option<(f64, LeadState)> = None;
    for agent in &pred.agents {
        let Some(Some(p)) = agent.steps.get(step).copied() else {
            continue;
        };
        if !p.in_path || p.x <= x_ego_next {
            continue;
        }
        if best.map_or(true, |(bx, _)| p.x < bx) {
            best = Some((
                p.x,
                LeadState {
                    x: p.x,
                    v: p.v,
                    a: lead_accel(agent, step, cfg),
                },
            ));
        }
    }
    best.map(|(_, lead)| lead)
}

/// Check whether a state is terminal (the planning horizon is reached).
pub fn is_terminal(s: &LongState, cfg: &MdpConfig) -> bool {
    s.t >= cfg.horizon
}

fn advance_ego(
    s: &LongState,
    a_next: f64,
    effective_jerk: f64,
    pred: &PredictionTable,
    cfg: &MdpConfig,
) -> LongState {
    let dt = cfg.dt;
    let v_next = (s.v_ego + s.a_ego * dt + 0.5 * effective_jerk * dt * dt).max(0.0);
    let x_next = (s.x_ego
        + s.v_ego * dt
        + 0.5 * s.a_ego * dt * dt
        + effective_jerk * dt * dt * dt / 6.0)
        .max(s.x_ego);
    let t_next = s.t + dt;
    LongState {
        x_ego: x_next,
        v_ego: v_next,
        a_ego: a_next,
        lead: lead_lookup(x_next, pred, t_next, cfg),
        t: t_next,
        x_max: s.x_max,
        v_max: s.v_max,
    }
}

/// Forward-integrate one jerk command. Returns the next state and the
/// effective jerk after the acceleration clamp (needed by the reward).
pub fn transition(
    s: &LongState,
    a: JerkAction,
    pred: &PredictionTable,
    cfg: &MdpConfig,
) -> Result<(LongState, f64), MdpError> {
    if is_terminal(s, cfg) {
        return Err(MdpError::TerminalState { t: s.t });
    }
    let a_next = cfg.clip_accel(s.a_ego + a.jerk() * cfg.dt);
    let effective_jerk = (a_next - s.a_ego) / cfg.dt;
    Ok((advance_ego(s, a_next, effective_jerk, pred, cfg), effective_jerk))
}

/// Transition for acceleration-space policies (rollout and padding): the
/// commanded acceleration is clamped and held constant over the step.
pub fn transition_accel(
    s: &LongState,
    accel_cmd: f64,
    pred: &PredictionTable,
    cfg: &MdpConfig,
) -> Result<(LongState, f64), MdpError> {
    if is_terminal(s, cfg) {
        return Err(MdpError::TerminalState { t: s.t });
    }
    let a_next = cfg.clip_accel(accel_cmd);
    let effective_jerk = (a_next - s.a_ego) / cfg.dt;
    let dt = cfg.dt;
    // Constant acceleration over the step, same floors as the jerk transition.
    let v_next = (s.v_ego + a_next * dt).max(0.0);
    let x_next = (s.x_ego + s.v_ego * dt + 0.5 * a_next * dt * dt).max(s.x_ego);
    let t_next = s.t + dt;
    Ok((
        LongState {
            x_ego: x_next,
            v_ego: v_next,
            a_ego: a_next,
            lead: lead_lookup(x_next, pred, t_next, cfg),
            t: t_next,
            x_max: s.x_max,
            v_max: s.v_max,
        },
        effective_jerk,
    ))
}

/// Cost of a state, the weighted sum of comfort, tracking, safety, clearance,
/// and stop-buffer terms. Lead terms are 0 when there is no lead.
pub fn cost(s: &LongState, effective_jerk: f64, cfg: &MdpConfig) -> f64 {
    let w = &cfg.weights;
    let v = s.v_ego;
    let mut c = w.jerk * effective_jerk * effective_jerk;
    c += w.accel * s.a_ego * s.a_ego;
    let speed_dev = (s.v_max - v).abs();
    c += w.speed * speed_dev;
    if speed_dev < 0.5 {
        c -= 2.0 * w.speed;
    }
    let stop_sign = if cfg.negate_stop_term { -1.0 } else { 1.0 };
    if let Some(lead) = &s.lead {
        if s.x_ego >= lead.x {
            let dv = lead.v - v;
            c += w.collision * dv * dv;
        }
        let gap = lead.x - s.x_ego;
        if gap > 0.0 && gap < cfg.delta {
            let short = gap - cfg.delta;
            c += w.clearance * short * short;
        }
        if v.abs() < cfg.stop_speed_epsilon && gap >= cfg.delta && gap < 3.0 {
            c += stop_sign * w.stop * (s.v_max - 2.0 * v);
        }
    }
    if s.x_ego >= s.x_max {
        c += w.collision * v * v;
    }
    let station_gap = s.x_max - s.x_ego;
    if station_gap > 0.0 && station_gap < cfg.delta {
        c += w.clearance * station_gap * station_gap;
    }
    if v.abs() < cfg.stop_speed_epsilon && station_gap >= 0.0 && station_gap < 2.0 {
        c += stop_sign * w.stop * (s.v_max - 2.0 * v);
    }
    c
}

/// Reward of a transition: `-alpha * cost(s')` with the effective jerk of the
/// transition that produced `s_next`.
pub fn reward(s_next: &LongState, effective_jerk: f64, cfg: &MdpConfig) -> f64 {
    -cfg.alpha * cost(s_next, effective_jerk, cfg)
}

/// Whether the ego can stop before `stop_line` within the hard deceleration
/// bound.
pub fn can_stop_before(ego_x: f64, ego_v: f64, stop_line: f64, cfg: &MdpConfig) -> bool {
    let dist = stop_line - ego_x;
    if dist <= 0.0 {
        return false;
    }
    // Required constant deceleration v^2 / (2 d).
    ego_v * ego_v / (2.0 * dist) <= -cfg.accel_min
}

/// Build the initial MDP state from a scene snapshot. The lead comes from the
/// current agent states (not predictions); `x_max` is the closer of the goal
/// and the nearest stoppable red/yellow light.
pub fn init_state(snap: &SceneSnapshot, cfg: &MdpConfig) -> Result<LongState, MdpError> {
    if snap.ego_lateral_offset.abs() > LATERAL_TOLERANCE {
        return Err(MdpError::EgoOffPath {
            offset: snap.ego_lateral_offset,
            tolerance: LATERAL_TOLERANCE,
        });
    }
    let mut x_max = snap.goal;
    if let Some(stop_line) = snap.stop_light {
        if can_stop_before(snap.ego_x, snap.ego_v, stop_line, cfg) {
            x_max = x_max.min(stop_line);
        }
    }
    let mut lead: Option<LeadState> = None;
    for agent in &snap.agents {
        if !agent.in_path || agent.x <= snap.ego_x {
            continue;
        }
        if lead.map_or(true, |l| agent.x < l.x) {
            lead = Some(LeadState {
                x: agent.x,
                v: agent.v,
                a: agent.a,
            });
        }
    }
    Ok(LongState {
        x_ego: snap.ego_x,
        v_ego: snap.ego_v,
        a_ego: cfg.clip_accel(snap.ego_a),
        lead,
        t: 0.0,
        x_max,
        v_max: snap.v_max,
    })
}
