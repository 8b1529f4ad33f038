//! Inner angular-rate loop with gravity compensation.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::actuation::{Mixer, RotorCommand, Wrench};
use crate::error::{Error, Result};
use crate::rigid_body::{InertialParams, RigidBodyState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateCtrlParams {
    /// Proportional gains on the body rates, 1/s.
    pub kp: [f64; 3],
    /// Tilt beyond which gravity compensation stops growing, rad.
    pub max_tilt_comp: f64,
}

impl Default for RateCtrlParams {
    fn default() -> Self {
        Self {
            kp: [20.0, 20.0, 8.0],
            max_tilt_comp: 60f64.to_radians(),
        }
    }
}

impl RateCtrlParams {
    pub fn validate(&self) -> Result<()> {
        if !self.kp.iter().all(|k| k.is_finite() && *k > 0.0) {
            return Err(Error::config("rate_ctrl.kp", "gains must be > 0"));
        }
        if !(self.max_tilt_comp > 0.0 && self.max_tilt_comp < std::f64::consts::FRAC_PI_2) {
            return Err(Error::config(
                "rate_ctrl.max_tilt_comp",
                "must lie in (0, pi/2)",
            ));
        }
        Ok(())
    }
}

/// Agent command: thrust offset from the compensated hover thrust (N) and
/// desired body roll/pitch rates (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RateCommand {
    pub thrust: f64,
    pub rate_x: f64,
    pub rate_y: f64,
}

/// Collective thrust needed to hold altitude at the current tilt, bounded at
/// `max_tilt_comp`.
pub fn gravity_compensation(
    state: &RigidBodyState,
    inertial: &InertialParams,
    ctrl: &RateCtrlParams,
) -> f64 {
    let cos_tilt = state.rotation[(2, 2)];
    inertial.hover_thrust() / cos_tilt.max(ctrl.max_tilt_comp.cos())
}

pub fn compute_wrench(
    cmd: &RateCommand,
    yaw_rate: f64,
    state: &RigidBodyState,
    inertial: &InertialParams,
    ctrl: &RateCtrlParams,
) -> Wrench {
    let thrust = cmd.thrust + gravity_compensation(state, inertial, ctrl);
    let w = state.angular_velocity;
    let j = inertial.inertia();
    let rate_error = Vector3::new(cmd.rate_x, cmd.rate_y, yaw_rate) - w;
    let kp = Vector3::from(ctrl.kp);
    let torque = j.component_mul(&kp.component_mul(&rate_error)) + w.cross(&j.component_mul(&w));
    Wrench::new(thrust, torque)
}

pub fn compute_rotor_commands(
    cmd: &RateCommand,
    yaw_rate: f64,
    state: &RigidBodyState,
    inertial: &InertialParams,
    mixer: &Mixer,
    ctrl: &RateCtrlParams,
) -> RotorCommand {
    mixer.wrench_to_rotor_speeds(&compute_wrench(cmd, yaw_rate, state, inertial, ctrl))
}
