//! Episode metrics: collisions, comfort, progress, time gaps, human-likeness
//! versus an expert drive, onset-delay errors, latency statistics, and CSV
//! export.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{LightState, TrafficLight};
use crate::sim::RolloutLog;

/// Nominal car length used by the 1-D overlap tests (m). A body occupies
/// `[x - CAR_LENGTH, x]` with `x` the front bumper.
pub const CAR_LENGTH: f64 = 4.0;

/// Comfort envelope on acceleration and longitudinal jerk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComfortBounds {
    pub accel_min: f64,
    pub accel_max: f64,
    pub jerk_abs_max: f64,
}

impl Default for ComfortBounds {
    fn default() -> Self {
        ComfortBounds { accel_min: -4.05, accel_max: 2.40, jerk_abs_max: 4.13 }
    }
}

/// Deceleration counts as begun when accel stays at or below this threshold
/// (m/s^2) ...
pub const DECEL_ONSET_THRESHOLD: f64 = -0.5;
/// ... for at least this long (s). Acceleration onset is symmetric at +0.5.
pub const ONSET_SUSTAIN: f64 = 0.3;

/// Speeds above `v_max` by more than this margin count as violations (m/s).
pub const SPEED_VIOLATION_MARGIN: f64 = 0.1;

/// Ego speeds below this are treated as standstill for collision purposes.
pub const STANDSTILL_SPEED: f64 = 0.01;

/// Floor on ego speed in the time-gap quotient (m/s).
pub const TIME_GAP_SPEED_FLOOR: f64 = 0.1;

/// Per-episode metrics over the non-warmup portion of a rollout log. The
/// expert-relative fields are absent when no expert log was supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario_id: String,
    pub planner: String,
    /// False when the planner aborted mid-episode.
    pub completed: bool,
    /// Overlap-entry events of the ego front into an agent body while moving.
    pub front_collisions: u32,
    /// Overlap-entry events of a moving agent front into the ego body.
    pub rear_collision_proxy: u32,
    /// Smallest bumper gap to an in-path agent ahead (m); `inf` if none.
    pub min_gap: f64,
    /// Smallest time gap (s); `inf` if no agent ahead.
    pub min_time_gap: f64,
    pub max_abs_jerk: f64,
    pub max_accel: f64,
    pub min_accel: f64,
    pub comfort_accel_ok: bool,
    pub comfort_jerk_ok: bool,
    pub mean_speed: f64,
    /// Fraction of ticks with speed above `v_max` plus margin.
    pub speed_violation_fraction: f64,
    /// Distance traveled over the measured window (m).
    pub progress: f64,
    /// First time (s, absolute) deceleration is sustained; `None` if never.
    pub decel_onset: Option<f64>,
    /// Ego front crossed the stop line during red; `None` without a light.
    pub red_light_violation: Option<bool>,
    /// Ego progress divided by expert progress on the same scenario.
    pub progress_ratio: Option<f64>,
    /// Mean pointwise position distance to the time-aligned expert (m).
    pub l2_error: Option<f64>,
    /// Ego deceleration-onset time minus the expert's (s).
    pub decel_delay: Option<f64>,
    /// Ego acceleration-onset time minus the expert's (s).
    pub accel_delay: Option<f64>,
    /// Max |v_ego - v_expert| normalized by the expert's max speed.
    pub max_speed_error: Option<f64>,
}

impl MetricsRow {
    pub fn comfort_ok(&self) -> bool {
        self.comfort_accel_ok && self.comfort_jerk_ok
    }
}

/// First `t` at which `accept(value)` holds for at least `ONSET_SUSTAIN`
/// seconds of consecutive ticks.
fn sustained_onset(
    ticks: &[(f64, f64)],
    tick_dt: f64,
    accept: impl Fn(f64) -> bool,
) -> Option<f64> {
    let needed = (ONSET_SUSTAIN / tick_dt).round() as usize;
    let mut run_start: Option<(usize, f64)> = None;
    for (i, &(t, value)) in ticks.iter().enumerate() {
        if accept(value) {
            let (start_i, start_t) = *run_start.get_or_insert((i, t));
            if i - start_i + 1 >= needed {
                return Some(start_t);
            }
        } else {
            run_start = None;
        }
    }
    None
}

/// First sustained deceleration onset over the whole log (warmup included,
/// since reaction timing is the point of the measurement).
pub fn decel_onset(log: &RolloutLog) -> Option<f64> {
    let series: Vec<(f64, f64)> = log.ticks.iter().map(|k| (k.t, k.a)).collect();
    sustained_onset(&series, crate::scenario::TRACE_DT, |a| a <= DECEL_ONSET_THRESHOLD)
}

/// First sustained acceleration onset (threshold +0.5 m/s^2).
pub fn accel_onset(log: &RolloutLog) -> Option<f64> {
    let series: Vec<(f64, f64)> = log.ticks.iter().map(|k| (k.t, k.a)).collect();
    sustained_onset(&series, crate::scenario::TRACE_DT, |a| a >= -DECEL_ONSET_THRESHOLD)
}

/// Whether the ego front passed the stop line while the light was red.
pub fn red_light_violation(log: &RolloutLog, light: &TrafficLight) -> bool {
    log.ticks
        .iter()
        .any(|k| k.x > light.stop_line && matches!(light.state_at(k.t), LightState::Red))
}

pub fn compute_metrics(
    log: &RolloutLog,
    expert_log: Option<&RolloutLog>,
    bounds: &ComfortBounds,
) -> MetricsRow {
    let measured: Vec<_> = log.ticks.iter().filter(|k| !k.warmup).collect();
    let mut front_collisions = 0u32;
    let mut rear_collision_proxy = 0u32;
    let mut in_front_overlap = false;
    let mut in_rear_overlap = false;
    let mut min_gap = f64::INFINITY;
    let mut min_time_gap = f64::INFINITY;
    let mut max_abs_jerk: f64 = 0.0;
    let mut max_accel = f64::NEG_INFINITY;
    let mut min_accel = f64::INFINITY;
    let mut speed_sum = 0.0;
    let mut violations = 0usize;
    for tick in &measured {
        max_abs_jerk = max_abs_jerk.max(tick.jerk.abs());
        max_accel = max_accel.max(tick.a);
        min_accel = min_accel.min(tick.a);
        speed_sum += tick.v;
        if tick.v > log.v_max + SPEED_VIOLATION_MARGIN {
            violations += 1;
        }
        let mut front_overlap = false;
        let mut rear_overlap = false;
        for agent in tick.agents.iter().flatten() {
            if !agent.in_path {
                continue;
            }
            if agent.x >= tick.x {
                let gap = (agent.x - CAR_LENGTH - tick.x).max(0.0);
                min_gap = min_gap.min(gap);
                min_time_gap = min_time_gap.min(gap / tick.v.max(TIME_GAP_SPEED_FLOOR));
            }
            // Front collision: ego front inside the agent body while moving.
            if tick.x >= agent.x - CAR_LENGTH && tick.x <= agent.x && tick.v > STANDSTILL_SPEED {
                front_overlap = true;
            }
            // Rear proxy: a moving agent's front inside the ego body.
            if agent.x >= tick.x - CAR_LENGTH
                && agent.x <= tick.x
                && agent.v > STANDSTILL_SPEED
            {
                rear_overlap = true;
            }
        }
        if front_overlap && !in_front_overlap {
            front_collisions += 1;
        }
        if rear_overlap && !in_rear_overlap {
            rear_collision_proxy += 1;
        }
        in_front_overlap = front_overlap;
        in_rear_overlap = rear_overlap;
    }
    let n = measured.len().max(1) as f64;
    let progress = match (measured.first(), measured.last()) {
        (Some(first), Some(last)) => last.x - first.x,
        _ => 0.0,
    };

    let expert_measured: Option<Vec<_>> =
        expert_log.map(|e| e.ticks.iter().filter(|k| !k.warmup).collect());
    let (progress_ratio, l2_error, max_speed_error) = match &expert_measured {
        Some(expert) if !expert.is_empty() && !measured.is_empty() => {
            let e_progress = expert.last().unwrap().x - expert.first().unwrap().x;
            let ratio = progress / e_progress.max(1e-9);
            let aligned: Vec<_> = measured.iter().zip(expert.iter()).collect();
            let l2 = aligned.iter().map(|(a, b)| (a.x - b.x).abs()).sum::<f64>()
                / aligned.len() as f64;
            let max_expert_speed =
                expert.iter().map(|k| k.v).fold(0.0_f64, f64::max).max(TIME_GAP_SPEED_FLOOR);
            let max_dv = aligned.iter().map(|(a, b)| (a.v - b.v).abs()).fold(0.0_f64, f64::max);
            (Some(ratio.max(0.0)), Some(l2), Some(max_dv / max_expert_speed))
        }
        _ => (None, None, None),
    };
    let decel = decel_onset(log);
    let accel = accel_onset(log);
    let (decel_delay, accel_delay) = match expert_log {
        Some(e) => (
            decel.zip(decel_onset(e)).map(|(a, b)| a - b),
            accel.zip(accel_onset(e)).map(|(a, b)| a - b),
        ),
        None => (None, None),
    };

    MetricsRow {
        scenario_id: log.scenario_id.clone(),
        planner: log.planner.clone(),
        completed: log.failure.is_none(),
        front_collisions,
        rear_collision_proxy,
        min_gap,
        min_time_gap,
        max_abs_jerk,
        max_accel,
        min_accel,
        comfort_accel_ok: measured.is_empty()
            || (min_accel >= bounds.accel_min && max_accel <= bounds.accel_max),
        comfort_jerk_ok: max_abs_jerk <= bounds.jerk_abs_max,
        mean_speed: speed_sum / n,
        speed_violation_fraction: violations as f64 / n,
        progress,
        decel_onset: decel,
        red_light_violation: None,
        progress_ratio,
        l2_error,
        decel_delay,
        accel_delay,
        max_speed_error,
    }
}

/// Fleet-level aggregation of per-episode rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub planner: String,
    pub episodes: usize,
    pub completed: usize,
    pub episodes_with_collision: usize,
    pub total_collisions: u32,
    pub comfort_pass_rate: f64,
    pub mean_max_abs_jerk: f64,
    pub mean_progress: f64,
    pub mean_speed_violation_fraction: f64,
    pub mean_l2_error: Option<f64>,
    pub mean_progress_ratio: Option<f64>,
}

fn mean_present(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    if present.is_empty() {
        None
    } else {
        Some(present.iter().sum::<f64>() / present.len() as f64)
    }
}

pub fn aggregate(planner: &str, rows: &[MetricsRow]) -> MetricsSummary {
    let n = rows.len().max(1) as f64;
    MetricsSummary {
        planner: planner.to_string(),
        episodes: rows.len(),
        completed: rows.iter().filter(|r| r.completed).count(),
        episodes_with_collision: rows.iter().filter(|r| r.front_collisions > 0).count(),
        total_collisions: rows.iter().map(|r| r.front_collisions).sum(),
        comfort_pass_rate: rows.iter().filter(|r| r.comfort_ok()).count() as f64 / n,
        mean_max_abs_jerk: rows.iter().map(|r| r.max_abs_jerk).sum::<f64>() / n,
        mean_progress: rows.iter().map(|r| r.progress).sum::<f64>() / n,
        mean_speed_violation_fraction:
            rows.iter().map(|r| r.speed_violation_fraction).sum::<f64>() / n,
        mean_l2_error: mean_present(rows.iter().map(|r| r.l2_error)),
        mean_progress_ratio: mean_present(rows.iter().map(|r| r.progress_ratio)),
    }
}

/// Nearest-rank percentile of an unsorted sample; `NaN` on empty input.
pub fn percentile(samples: &[f64], p: f64) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.saturating_sub(1).min(sorted.len() - 1)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub p99_99_ms: f64,
    pub max_ms: f64,
}

pub fn latency_stats(samples_ms: &[f64]) -> LatencyStats {
    let count = samples_ms.len();
    let mean = samples_ms.iter().sum::<f64>() / count.max(1) as f64;
    LatencyStats {
        count,
        mean_ms: mean,
        p50_ms: percentile(samples_ms, 50.0),
        p99_ms: percentile(samples_ms, 99.0),
        p99_99_ms: percentile(samples_ms, 99.99),
        max_ms: samples_ms.iter().cloned().fold(f64::NAN, f64::max),
    }
}

impl LatencyStats {
    /// Render as the Max / P99.99 / P99 / P50 / Average row table.
    pub fn table(&self) -> String {
        format!(
            "Max      {:>10.3} ms\nP99.99   {:>10.3} ms\nP99      {:>10.3} ms\n\
             P50      {:>10.3} ms\nAverage  {:>10.3} ms\n(n = {})",
            self.max_ms, self.p99_99_ms, self.p99_ms, self.p50_ms, self.mean_ms, self.count
        )
    }
}

#[derive(Debug, Error)]
pub enum MetricsIoError {
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to encode csv {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

fn opt_str<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or(String::new(), |x| x.to_string())
}

/// Write per-episode rows as CSV with a header row.
pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<(), MetricsIoError> {
    let mut writer = csv::Writer::from_path(path).map_err(|source| MetricsIoError::Csv {
        path: path.display().to_string(),
        source,
    })?;
    writer
        .write_record([
            "scenario_id",
            "planner",
            "completed",
            "front_collisions",
            "rear_collision_proxy",
            "min_gap",
            "min_time_gap",
            "max_abs_jerk",
            "max_accel",
            "min_accel",
            "comfort_ok",
            "mean_speed",
            "speed_violation_fraction",
            "progress",
            "decel_onset",
            "red_light_violation",
            "progress_ratio",
            "l2_error",
            "decel_delay",
            "accel_delay",
            "max_speed_error",
        ])
        .and_then(|_| {
            for r in rows {
                writer.write_record([
                    r.scenario_id.as_str(),
                    r.planner.as_str(),
                    &r.completed.to_string(),
                    &r.front_collisions.to_string(),
                    &r.rear_collision_proxy.to_string(),
                    &r.min_gap.to_string(),
                    &r.min_time_gap.to_string(),
                    &r.max_abs_jerk.to_string(),
                    &r.max_accel.to_string(),
                    &r.min_accel.to_string(),
                    &r.comfort_ok().to_string(),
                    &r.mean_speed.to_string(),
                    &r.speed_violation_fraction.to_string(),
                    &r.progress.to_string(),
                    &opt_str(&r.decel_onset),
                    &opt_str(&r.red_light_violation),
                    &opt_str(&r.progress_ratio),
                    &opt_str(&r.l2_error),
                    &opt_str(&r.decel_delay),
                    &opt_str(&r.accel_delay),
                    &opt_str(&r.max_speed_error),
                ])?;
            }
            writer.flush().map_err(csv::Error::from)
        })
        .map_err(|source| MetricsIoError::Csv { path: path.display().to_string(), source })
}
