//! Rollout, padding, and prior policies pluggable into the tree search:
//! the intelligent driver model, constant speed, and a uniform action prior.
//! These act in acceleration space and pair with `transition_accel`.

use serde::{Deserialize, Serialize};

use crate::mdp::{is_terminal, reward, transition_accel, LongState, MdpConfig, PredictionTable};

/// Intelligent-driver-model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Desired speed (m/s); `None` tracks the speed limit of the state.
    pub v0: Option<f64>,
    /// Desired time headway (s).
    pub headway: f64,
    /// Maximum acceleration (m/s^2).
    pub a_max: f64,
    /// Comfortable deceleration (m/s^2).
    pub b: f64,
    /// Minimum gap (m).
    pub s0: f64,
    /// Free-road exponent.
    pub exponent: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams {
            v0: None,
            headway: 1.5,
            a_max: 2.0,
            b: 2.0,
            s0: 2.0,
            exponent: 4.0,
        }
    }
}

impl IdmParams {
    /// Comfort-tuned variant used by the synthetic expert driver.
    pub fn comfort() -> Self {
        IdmParams {
            a_max: 1.2,
            b: 1.5,
            ..IdmParams::default()
        }
    }
}

/// Standard IDM acceleration law, clipped to the MDP acceleration bounds.
/// A nonpositive gap with a lead present is treated as an emergency stop.
pub fn idm_accel(
    v_ego: f64,
    v0: f64,
    gap: Option<f64>,
    v_lead: Option<f64>,
    params: &IdmParams,
    cfg: &MdpConfig,
) -> f64 {
    let free = 1.0 - (v_ego / v0).powf(params.exponent);
    let accel = match (gap, v_lead) {
        (Some(gap), Some(v_lead)) => {
            if gap <= 0.0 {
                return cfg.accel_min;
            }
            let dv = v_ego - v_lead;
            let s_star = params.s0
                + v_ego * params.headway
                + v_ego * dv / (2.0 * (params.a_max * params.b).sqrt());
            let interaction = (s_star / gap).powi(2);
            params.a_max * (free - interaction)
        }
        _ => params.a_max * free,
    };
    cfg.clip_accel(accel)
}

/// An acceleration-space policy: maps a state to a command acceleration.
pub trait AccelPolicy {
    fn accel(&self, s: &LongState, cfg: &MdpConfig) -> f64;
}

/// IDM car following against the lead in the state.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdmPolicy {
    pub params: IdmParams,
}

impl AccelPolicy for IdmPolicy {
    fn accel(&self, s: &LongState, cfg: &MdpConfig) -> f64 {
        let v0 = self.params.v0.unwrap_or(s.v_max).max(0.1);
        let (gap, v_lead) = match &s.lead {
            Some(lead) => (Some(lead.x - s.x_ego), Some(lead.v)),
            None => (None, None),
        };
        idm_accel(s.v_ego, v0, gap, v_lead, &self.params, cfg)
    }
}

/// IDM that also brakes for `x_max` by treating it as a stopped virtual lead,
/// with the per-step acceleration change capped to a jerk limit. Used by the
/// synthetic expert driver and the standalone IDM planner.
#[derive(Debug, Clone, Copy)]
pub struct GoalAwareIdmPolicy {
    pub params: IdmParams,
    /// Maximum |da/dt| between consecutive commands (m/s^3).
    pub jerk_limit: f64,
}

impl GoalAwareIdmPolicy {
    pub fn new(params: IdmParams, jerk_limit: f64) -> Self {
        GoalAwareIdmPolicy { params, jerk_limit }
    }
}

impl AccelPolicy for GoalAwareIdmPolicy {
    fn accel(&self, s: &LongState, cfg: &MdpConfig) -> f64 {
        let v0 = self.params.v0.unwrap_or(s.v_max).max(0.1);
        let lead_accel = match &s.lead {
            Some(lead) => idm_accel(
                s.v_ego,
                v0,
                Some(lead.x - s.x_ego),
                Some(lead.v),
                &self.params,
                cfg,
            ),
            None => idm_accel(s.v_ego, v0, None, None, &self.params, cfg),
        };
        let goal_accel = if s.x_max.is_finite() && s.x_max - s.x_ego < 200.0 {
            idm_accel(s.v_ego, v0, Some(s.x_max - s.x_ego), Some(0.0), &self.params, cfg)
        } else {
            f64::INFINITY
        };
        let raw = lead_accel.min(goal_accel);
        let max_step = self.jerk_limit * cfg.dt;
        raw.clamp(s.a_ego - max_step, s.a_ego + max_step)
    }
}

/// Always commands 0 m/s^2.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantSpeedPolicy;

impl AccelPolicy for ConstantSpeedPolicy {
    fn accel(&self, _s: &LongState, _cfg: &MdpConfig) -> f64 {
        0.0
    }
}

/// A prior over the five jerk actions, used by the tree policy.
pub trait PriorPolicy {
    fn prior(&self, s: &LongState) -> [f64; 5];
}

/// P(s, a) = 1 / |A| for every action.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformPrior;

impl PriorPolicy for UniformPrior {
    fn prior(&self, _s: &LongState) -> [f64; 5] {
        [0.2; 5]
    }
}

/// Monte Carlo leaf evaluation: simulate with `transition_accel` under the
/// policy until termination and return the discounted sum of rewards.
pub fn rollout_return(
    s: &LongState,
    policy: &dyn AccelPolicy,
    pred: &PredictionTable,
    cfg: &MdpConfig,
) -> f64 {
    let mut state = *s;
    let mut total = 0.0;
    let mut discount = 1.0;
    while !is_terminal(&state, cfg) {
        let accel_cmd = policy.accel(&state, cfg);
        let (next, effective_jerk) = transition_accel(&state, accel_cmd, pred, cfg)
            .expect("non-terminal state in rollout");
        total += discount * reward(&next, effective_jerk, cfg);
        discount *= cfg.gamma;
        state = next;
    }
    total
}
