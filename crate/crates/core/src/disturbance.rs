//! Recoil impulse schedule and the binary warning trigger.
//!
//! The trigger switches on at `trigger_start` for `trigger_duration`
//! seconds. The impulse starts at `trigger_start + trigger_duration - jitter`
//! with `jitter ~ U(-0.05, 0.05)` and lasts `impulse_duration` seconds. Both
//! windows are half-open.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bound on the trigger-to-impulse jitter, s.
pub const MAX_JITTER: f64 = 0.05;

/// Slack for comparing times that are built from step counts.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisturbanceParams {
    /// Lower bound of the peak body-x force, N.
    pub f_x_min: f64,
    /// Upper bound of the peak body-x force, N.
    pub f_x_max: f64,
    /// Trigger duration before the nominal impulse time, s.
    pub trigger_duration: f64,
    pub impulse_duration: f64,
    /// Std of the Gaussian noise added to the body-x force, N.
    pub noise_std: f64,
    /// Earliest trigger onset, s.
    pub earliest_trigger: f64,
    /// Time left after the impulse before the episode ends, s.
    pub recovery_time: f64,
}

impl Default for DisturbanceParams {
    fn default() -> Self {
        Self {
            f_x_min: -1050.0,
            f_x_max: -950.0,
            trigger_duration: 0.5,
            impulse_duration: 0.01,
            noise_std: 25.0,
            earliest_trigger: 1.0,
            recovery_time: 3.0,
        }
    }
}

impl DisturbanceParams {
    pub fn validate(&self) -> Result<()> {
        let p = |k: &str| format!("disturbance.{k}");
        if !(self.f_x_min.is_finite() && self.f_x_max.is_finite()) || self.f_x_min > self.f_x_max {
            return Err(Error::config(p("f_x_min"), "need finite f_x_min <= f_x_max"));
        }
        for (name, value) in [
            ("trigger_duration", self.trigger_duration),
            ("impulse_duration", self.impulse_duration),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(p(name), format!("must be > 0, got {value}")));
            }
        }
        for (name, value) in [
            ("noise_std", self.noise_std),
            ("earliest_trigger", self.earliest_trigger),
            ("recovery_time", self.recovery_time),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::config(p(name), format!("must be >= 0, got {value}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceEvent {
    pub trigger_start: f64,
    pub trigger_duration: f64,
    pub jitter: f64,
    pub impulse_time: f64,
    /// Peak force in the body frame, N. Only the x component is non-zero.
    pub peak_force: Vector3<f64>,
    pub impulse_duration: f64,
    pub noise_std: f64,
}

impl DisturbanceEvent {
    pub fn new(
        trigger_start: f64,
        trigger_duration: f64,
        jitter: f64,
        peak_force_x: f64,
        impulse_duration: f64,
        noise_std: f64,
    ) -> Self {
        Self {
            trigger_start,
            trigger_duration,
            jitter,
            impulse_time: trigger_start + trigger_duration - jitter,
            peak_force: Vector3::new(peak_force_x, 0.0, 0.0),
            impulse_duration,
            noise_std,
        }
    }

    pub fn trigger_end(&self) -> f64 {
        self.trigger_start + self.trigger_duration
    }

    pub fn impulse_end(&self) -> f64 {
        self.impulse_time + self.impulse_duration
    }

    pub fn impulse_active(&self, t: f64) -> bool {
        t >= self.impulse_time - TIME_EPS && t < self.impulse_end() - TIME_EPS
    }
}

/// Samples one event for an episode of `episode_length` seconds.
///
/// The trigger onset is drawn on the `dt` grid so that the trigger stays on
/// for exactly `trigger_duration / dt` steps.
pub fn sample_event<R: Rng + ?Sized>(
    params: &DisturbanceParams,
    episode_length: f64,
    dt: f64,
    rng: &mut R,
) -> Result<DisturbanceEvent> {
    let latest = episode_length
        - params.recovery_time
        - params.impulse_duration
        - params.trigger_duration
        - MAX_JITTER;
    let first_step = (params.earliest_trigger / dt - TIME_EPS).ceil() as i64;
    let last_step = (latest / dt + TIME_EPS).floor() as i64;
    if last_step < first_step {
        return Err(Error::ScheduleInfeasible(format!(
            "episode of {episode_length} s cannot fit trigger onset >= {} s, \
             trigger {} s, impulse {} s and {} s recovery",
            params.earliest_trigger,
            params.trigger_duration,
            params.impulse_duration,
            params.recovery_time
        )));
    }
    let force = if params.f_x_min < params.f_x_max {
        rng.gen_range(params.f_x_min..=params.f_x_max)
    } else {
        params.f_x_min
    };
    let jitter = rng.gen_range(-MAX_JITTER..=MAX_JITTER);
    let start_step = rng.gen_range(first_step..=last_step);
    Ok(DisturbanceEvent::new(
        start_step as f64 * dt,
        params.trigger_duration,
        jitter,
        force,
        params.impulse_duration,
        params.noise_std,
    ))
}

/// Warning signal: 1 inside `[trigger_start, trigger_start + T_t)`, else 0.
pub fn trigger_value(event: &DisturbanceEvent, t: f64) -> f64 {
    if t >= event.trigger_start - TIME_EPS && t < event.trigger_end() - TIME_EPS {
        1.0
    } else {
        0.0
    }
}

/// Body-frame disturbance force at time `t`. Noise is drawn from `rng` only
/// while the impulse is active.
pub fn disturbance_force<R: Rng + ?Sized>(
    event: &DisturbanceEvent,
    t: f64,
    rng: &mut R,
) -> Vector3<f64> {
    if !event.impulse_active(t) {
        return Vector3::zeros();
    }
    let mut force = event.peak_force;
    if event.noise_std > 0.0 {
        let noise = Normal::new(0.0, event.noise_std).expect("finite std");
        force.x += noise.sample(rng);
    }
    force
}
