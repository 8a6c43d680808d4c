//! Scenario definition and log-playback world: file schema, trace
//! interpolation, prediction construction, and the synthetic scenario suite
//! generator.
//!
//! Scenario files are JSON with a versioned header field. Agent traces are
//! timestamped samples at 0.1 s resolution; the world replays them regardless
//! of ego behavior (non-reactive log playback).

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{AgentPrediction, MdpConfig, PredictedStep, PredictionTable, SceneSnapshot};

/// Resolution of agent traces and of the closed-loop simulation (s).
pub const TRACE_DT: f64 = 0.1;

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub t: f64,
    pub x: f64,
    pub v: f64,
    pub in_path: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrace {
    pub id: String,
    pub samples: Vec<TraceSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LightState {
    Red,
    Yellow,
    Green,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightPhase {
    pub state: LightState,
    /// Phase end time (s); phases are contiguous from t = 0.
    pub until: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficLight {
    pub stop_line: f64,
    pub phases: Vec<LightPhase>,
}

impl TrafficLight {
    /// Light state at time `t`; past the last phase the last state holds.
    pub fn state_at(&self, t: f64) -> LightState {
        for phase in &self.phases {
            if t < phase.until {
                return phase.state;
            }
        }
        self.phases.last().map(|p| p.state).unwrap_or(LightState::Green)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoInit {
    pub x: f64,
    pub v: f64,
    pub a: f64,
    #[serde(default)]
    pub lateral_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub version: u32,
    pub id: String,
    /// Episode length (s).
    pub duration: f64,
    pub ego: EgoInit,
    pub path_length: f64,
    pub v_max: f64,
    /// Goal offset along the reference path (m).
    pub goal: f64,
    pub traffic_light: Option<TrafficLight>,
    pub agents: Vec<AgentTrace>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid scenario {id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("time {t} s outside episode [0, {duration}] s")]
    OutOfRange { t: f64, duration: f64 },
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |reason: String| {
            Err(ScenarioError::Invalid { id: self.id.clone(), reason })
        };
        if self.version != SCENARIO_VERSION {
            return fail(format!("unsupported version {}", self.version));
        }
        if !(self.v_max > 0.0) {
            return fail(format!("v_max must be positive, got {}", self.v_max));
        }
        if self.ego.v < 0.0 {
            return fail(format!("ego initial speed must be >= 0, got {}", self.ego.v));
        }
        if !(self.duration > 0.0) {
            return fail(format!("duration must be positive, got {}", self.duration));
        }
        for agent in &self.agents {
            for w in agent.samples.windows(2) {
                if w[1].t <= w[0].t {
                    return fail(format!(
                        "agent {} trace not time-sorted at t = {}",
                        agent.id, w[1].t
                    ));
                }
            }
            for s in &agent.samples {
                if !(s.t.is_finite() && s.x.is_finite() && s.v.is_finite()) {
                    return fail(format!("agent {} has non-finite trace samples", agent.id));
                }
            }
        }
        Ok(())
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let scenario: Scenario =
        serde_json::from_str(&text).map_err(|source| ScenarioError::Parse {
            path: path.display().to_string(),
            source,
        })?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn save_scenario(scenario: &Scenario, path: &Path) -> Result<(), ScenarioError> {
    let mut text = serde_json::to_string_pretty(scenario).expect("scenario serializes");
    text.push('\n');
    fs::write(path, text).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Interpolated view of one agent at a point in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentInstant {
    pub x: f64,
    pub v: f64,
    pub in_path: bool,
}

fn interpolate(samples: &[TraceSample], t: f64) -> AgentInstant {
    debug_assert!(!samples.is_empty());
    let idx = samples.partition_point(|s| s.t <= t);
    if idx == 0 {
        let s = &samples[0];
        return AgentInstant { x: s.x, v: s.v, in_path: s.in_path };
    }
    if idx == samples.len() {
        let s = samples.last().unwrap();
        return AgentInstant { x: s.x, v: s.v, in_path: s.in_path };
    }
    let (a, b) = (&samples[idx - 1], &samples[idx]);
    let frac = (t - a.t) / (b.t - a.t);
    AgentInstant {
        x: a.x + frac * (b.x - a.x),
        v: a.v + frac * (b.v - a.v),
        // Flags are not interpolated; the earlier sample governs.
        in_path: a.in_path,
    }
}

/// Sample one trace at `t`; `None` before the trace starts or (when
/// `extrapolate` is false) after it ends. Extrapolation holds the last speed.
pub fn sample_trace(trace: &AgentTrace, t: f64, extrapolate: bool) -> Option<AgentInstant> {
    let first = trace.samples.first()?;
    let last = trace.samples.last()?;
    if t < first.t - 1e-9 {
        return None;
    }
    if t > last.t + 1e-9 {
        if !extrapolate {
            return None;
        }
        return Some(AgentInstant {
            x: last.x + last.v * (t - last.t),
            v: last.v,
            in_path: last.in_path,
        });
    }
    Some(interpolate(&trace.samples, t))
}

/// Replay the world at time `t`: one entry per agent, `None` where absent.
pub fn step_world(
    scenario: &Scenario,
    t: f64,
) -> Result<Vec<Option<AgentInstant>>, ScenarioError> {
    if t < -1e-9 || t > scenario.duration + 1e-9 {
        return Err(ScenarioError::OutOfRange { t, duration: scenario.duration });
    }
    Ok(scenario
        .agents
        .iter()
        .map(|trace| sample_trace(trace, t, false))
        .collect())
}

/// Oracle predictions: ground-truth playback downsampled to the MDP grid.
pub fn build_predictions(scenario: &Scenario, t0: f64, cfg: &MdpConfig) -> PredictionTable {
    let steps = cfg.steps();
    let agents = scenario
        .agents
        .iter()
        .map(|trace| AgentPrediction {
            steps: (1..=steps)
                .map(|i| {
                    let t = t0 + i as f64 * cfg.dt;
                    sample_trace(trace, t, true)
                        .map(|inst| PredictedStep { x: inst.x, v: inst.v, in_path: inst.in_path })
                })
                .collect(),
        })
        .collect();
    PredictionTable { agents }
}

fn agent_accel_estimate(trace: &AgentTrace, t: f64) -> f64 {
    let now = sample_trace(trace, t, false);
    let before = sample_trace(trace, t - TRACE_DT, false);
    match (now, before) {
        (Some(n), Some(b)) => (n.v - b.v) / TRACE_DT,
        _ => 0.0,
    }
}

/// Build the planner-facing scene snapshot at time `t` for a measured ego
/// state.
pub fn snapshot_at(
    scenario: &Scenario,
    t: f64,
    ego_x: f64,
    ego_v: f64,
    ego_a: f64,
) -> Result<SceneSnapshot, ScenarioError> {
    let world = step_world(scenario, t)?;
    let agents = scenario
        .agents
        .iter()
        .zip(&world)
        .filter_map(|(trace, inst)| {
            inst.map(|inst| crate::mdp::AgentSnapshot {
                x: inst.x,
                v: inst.v,
                a: agent_accel_estimate(trace, t),
                in_path: inst.in_path,
            })
        })
        .collect();
    let stop_light = scenario.traffic_light.as_ref().and_then(|light| {
        let relevant = matches!(light.state_at(t), LightState::Red | LightState::Yellow);
        (relevant && light.stop_line > ego_x).then_some(light.stop_line)
    });
    Ok(SceneSnapshot {
        ego_x,
        ego_v,
        ego_a,
        ego_lateral_offset: scenario.ego.lateral_offset,
        agents,
        goal: scenario.goal,
        v_max: scenario.v_max,
        stop_light,
    })
}

/// Scenario families of the synthetic suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    NoLead,
    ConstantLead,
    LeadBrake,
    StopAndGo,
    CutIn,
    TrafficLight,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::NoLead,
        Family::ConstantLead,
        Family::LeadBrake,
        Family::StopAndGo,
        Family::CutIn,
        Family::TrafficLight,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Family::NoLead => "no-lead",
            Family::ConstantLead => "constant-lead",
            Family::LeadBrake => "lead-brake",
            Family::StopAndGo => "stop-and-go",
            Family::CutIn => "cut-in",
            Family::TrafficLight => "traffic-light",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .iter()
            .find(|f| f.name() == s)
            .copied()
            .ok_or_else(|| format!("unknown scenario family '{s}'"))
    }
}

/// Suite request: how many scenarios and from which family mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub count: usize,
    pub families: Vec<Family>,
    pub duration: f64,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        SuiteSpec {
            count: 0,
            families: Family::ALL.to_vec(),
            duration: 30.0,
        }
    }
}

/// Integrate a lead trace from (x0, v0) under a piecewise acceleration
/// profile, with speed floored at 0.
fn integrate_trace(
    id: &str,
    x0: f64,
    v0: f64,
    duration: f64,
    in_path: bool,
    accel_at: impl Fn(f64) -> f64,
) -> AgentTrace {
    let steps = (duration / TRACE_DT).round() as usize;
    let mut samples = Vec::with_capacity(steps + 1);
    let mut x = x0;
    let mut v = v0;
    for i in 0..=steps {
        let t = i as f64 * TRACE_DT;
        samples.push(TraceSample { t, x, v, in_path });
        let a = accel_at(t);
        let v_next = (v + a * TRACE_DT).max(0.0);
        x += 0.5 * (v + v_next) * TRACE_DT;
        v = v_next;
    }
    AgentTrace { id: id.to_string(), samples }
}

fn base_scenario(id: String, rng: &mut ChaCha8Rng, duration: f64) -> Scenario {
    let v_max = rng.gen_range(8.0..15.0);
    let ego_v = rng.gen_range(2.0..v_max);
    Scenario {
        version: SCENARIO_VERSION,
        id,
        duration,
        ego: EgoInit { x: 0.0, v: ego_v, a: 0.0, lateral_offset: 0.0 },
        path_length: 1000.0,
        v_max,
        goal: 900.0,
        traffic_light: None,
        agents: Vec::new(),
    }
}

fn sample_family(
    family: Family,
    index: usize,
    rng: &mut ChaCha8Rng,
    duration: f64,
) -> Scenario {
    let id = format!("{}-{index:04}", family.name());
    let mut sc = base_scenario(id, rng, duration);
    match family {
        Family::NoLead => {}
        Family::ConstantLead => {
            let gap = rng.gen_range(5.0..60.0);
            let v_lead = rng.gen_range(0.0..15.0_f64).min(sc.v_max);
            sc.agents
                .push(integrate_trace("lead", sc.ego.x + gap, v_lead, duration, true, |_| 0.0));
        }
        Family::LeadBrake => {
            let gap = rng.gen_range(15.0..50.0);
            let v_lead = rng.gen_range(4.0..sc.v_max.min(12.0));
            sc.ego.v = v_lead.min(sc.ego.v).max(3.0);
            let brake_start = rng.gen_range(2.0..5.0);
            let decel = rng.gen_range(1.0..4.0);
            sc.agents.push(integrate_trace(
                "lead",
                sc.ego.x + gap,
                v_lead,
                duration,
                true,
                move |t| if t >= brake_start { -decel } else { 0.0 },
            ));
        }
        Family::StopAndGo => {
            let gap = rng.gen_range(8.0..40.0);
            let v_lead = rng.gen_range(3.0..sc.v_max.min(10.0));
            sc.ego.v = v_lead;
            let period = rng.gen_range(6.0..12.0);
            let decel = rng.gen_range(1.0..3.0);
            let accel = rng.gen_range(0.8..1.5);
            sc.agents.push(integrate_trace(
                "lead",
                sc.ego.x + gap,
                v_lead,
                duration,
                true,
                move |t| {
                    let phase = (t / period).floor() as i64 % 2;
                    if phase == 0 {
                        -decel
                    } else {
                        accel
                    }
                },
            ));
        }
        Family::CutIn => {
            let cut_time = rng.gen_range(2.0..6.0);
            let gap = rng.gen_range(3.0..10.0);
            let v_lead = sc.ego.v * rng.gen_range(0.3..0.7);
            // The agent drives in the adjacent lane until the cut, then
            // merges in front of the ego's projected position.
            let x_at_cut = sc.ego.x + sc.ego.v * cut_time + gap;
            let x0 = x_at_cut - v_lead * cut_time;
            let mut trace =
                integrate_trace("cut-in", x0, v_lead, duration, true, |_| 0.0);
            for s in &mut trace.samples {
                if s.t < cut_time {
                    s.in_path = false;
                }
            }
            sc.agents.push(trace);
        }
        Family::TrafficLight => {
            let stop_line = rng.gen_range(40.0..120.0);
            let red_until = rng.gen_range(15.0..duration);
            sc.traffic_light = Some(TrafficLight {
                stop_line,
                phases: vec![
                    LightPhase { state: LightState::Red, until: red_until },
                    LightPhase { state: LightState::Green, until: duration },
                ],
            });
        }
    }
    sc
}

/// Seeded sampler over the scenario families; deterministic per seed.
pub fn generate_scenario_suite(seed: u64, spec: &SuiteSpec) -> Vec<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let families = if spec.families.is_empty() {
        Family::ALL.to_vec()
    } else {
        spec.families.clone()
    };
    (0..spec.count)
        .map(|i| sample_family(families[i % families.len()], i, &mut rng, spec.duration))
        .collect()
}
