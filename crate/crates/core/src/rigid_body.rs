//! Quadrotor rigid-body dynamics and fixed-step integration.
//!
//! The state is `(p, v, R, w)`: world-frame position and velocity, the
//! body-to-world rotation matrix, and the body-frame angular velocity.
//! Gravity acts along `-z` of the world frame and the collective thrust
//! along `+z` of the body frame.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical step used throughout the simulator (100 Hz).
pub const DEFAULT_DT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidBodyState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    pub angular_velocity: Vector3<f64>,
}

impl Default for RigidBodyState {
    fn default() -> Self {
        Self::at_rest(Vector3::zeros())
    }
}

impl RigidBodyState {
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            rotation: Matrix3::identity(),
            angular_velocity: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|x| x.is_finite())
            && self.velocity.iter().all(|x| x.is_finite())
            && self.rotation.iter().all(|x| x.is_finite())
            && self.angular_velocity.iter().all(|x| x.is_finite())
    }

    /// Angle between the body z axis and the world z axis.
    pub fn tilt(&self) -> f64 {
        self.rotation[(2, 2)].clamp(-1.0, 1.0).acos()
    }
}

/// Mass properties. The inertia tensor is diagonal in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InertialParams {
    pub mass: f64,
    pub jxx: f64,
    pub jyy: f64,
    pub jzz: f64,
    pub gravity: f64,
}

impl Default for InertialParams {
    fn default() -> Self {
        Self {
            mass: 3.1,
            jxx: 0.039,
            jyy: 0.039,
            jzz: 0.061,
            gravity: 9.81,
        }
    }
}

impl InertialParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("mass", self.mass),
            ("jxx", self.jxx),
            ("jyy", self.jyy),
            ("jzz", self.jzz),
            ("gravity", self.gravity),
        ];
        for (name, value) in checks {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(
                    format!("inertial.{name}"),
                    format!("must be finite and > 0, got {value}"),
                ));
            }
        }
        Ok(())
    }

    pub fn inertia(&self) -> Vector3<f64> {
        Vector3::new(self.jxx, self.jyy, self.jzz)
    }

    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }
}

/// Time derivative of [`RigidBodyState`], laid out field by field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    pub angular_velocity: Vector3<f64>,
}

impl StateDerivative {
    pub fn is_zero(&self) -> bool {
        self.position == Vector3::zeros()
            && self.velocity == Vector3::zeros()
            && self.rotation == Matrix3::zeros()
            && self.angular_velocity == Vector3::zeros()
    }
}

pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Newton–Euler equations of motion.
///
/// `thrust` acts along the body z axis, `torque` and `disturbance` are in the
/// body frame.
pub fn dynamics_derivative(
    state: &RigidBodyState,
    thrust: f64,
    torque: &Vector3<f64>,
    disturbance: &Vector3<f64>,
    params: &InertialParams,
) -> Result<StateDerivative> {
    if !state.is_finite() {
        return Err(Error::InvalidState("non-finite state"));
    }
    if !thrust.is_finite()
        || !torque.iter().all(|x| x.is_finite())
        || !disturbance.iter().all(|x| x.is_finite())
    {
        return Err(Error::InvalidState("non-finite input"));
    }
    Ok(derivative_unchecked(state, thrust, torque, disturbance, params))
}

fn derivative_unchecked(
    state: &RigidBodyState,
    thrust: f64,
    torque: &Vector3<f64>,
    disturbance: &Vector3<f64>,
    params: &InertialParams,
) -> StateDerivative {
    let body_force = Vector3::new(disturbance.x, disturbance.y, thrust + disturbance.z);
    let acceleration = state.rotation * body_force / params.mass
        - Vector3::new(0.0, 0.0, params.gravity);

    let w = state.angular_velocity;
    let j = params.inertia();
    let jw = j.component_mul(&w);
    let angular_acceleration = (torque - w.cross(&jw)).component_div(&j);

    StateDerivative {
        position: state.velocity,
        velocity: acceleration,
        rotation: state.rotation * skew(&w),
        angular_velocity: angular_acceleration,
    }
}

fn offset(state: &RigidBodyState, k: &StateDerivative, h: f64) -> RigidBodyState {
    RigidBodyState {
        position: state.position + k.position * h,
        velocity: state.velocity + k.velocity * h,
        rotation: state.rotation + k.rotation * h,
        angular_velocity: state.angular_velocity + k.angular_velocity * h,
    }
}

/// One classical RK4 step with inputs held constant over `dt`, followed by
/// re-orthonormalization of the rotation.
pub fn integrate_step(
    state: &RigidBodyState,
    thrust: f64,
    torque: &Vector3<f64>,
    disturbance: &Vector3<f64>,
    params: &InertialParams,
    dt: f64,
) -> Result<RigidBodyState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidState("dt must be positive"));
    }
    let f = |s: &RigidBodyState| derivative_unchecked(s, thrust, torque, disturbance, params);

    let k1 = dynamics_derivative(state, thrust, torque, disturbance, params)?;
    let k2 = f(&offset(state, &k1, dt / 2.0));
    let k3 = f(&offset(state, &k2, dt / 2.0));
    let k4 = f(&offset(state, &k3, dt));

    let c = dt / 6.0;
    let next = RigidBodyState {
        position: state.position
            + (k1.position + 2.0 * k2.position + 2.0 * k3.position + k4.position) * c,
        velocity: state.velocity
            + (k1.velocity + 2.0 * k2.velocity + 2.0 * k3.velocity + k4.velocity) * c,
        rotation: state.rotation
            + (k1.rotation + 2.0 * k2.rotation + 2.0 * k3.rotation + k4.rotation) * c,
        angular_velocity: state.angular_velocity
            + (k1.angular_velocity
                + 2.0 * k2.angular_velocity
                + 2.0 * k3.angular_velocity
                + k4.angular_velocity)
                * c,
    };
    if !next.is_finite() {
        return Err(Error::InvalidState("integration produced non-finite state"));
    }
    Ok(RigidBodyState {
        rotation: orthonormalize(&next.rotation)?,
        ..next
    })
}

/// Projects onto the nearest rotation matrix (orthogonal polar factor).
///
/// Uses the Newton iteration `X <- (X + X^-T) / 2`, which converges
/// quadratically to the polar factor for any matrix with positive determinant.
pub fn orthonormalize(r: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let det = r.determinant();
    if det.is_nan() || det <= 0.0 || det.is_infinite() {
        return Err(Error::DegenerateRotation { det });
    }
    let mut x = *r;
    for _ in 0..30 {
        let inv_t = x
            .try_inverse()
            .ok_or(Error::DegenerateRotation { det })?
            .transpose();
        let next = (x + inv_t) * 0.5;
        let delta = (next - x).amax();
        x = next;
        if delta < 1e-15 {
            break;
        }
    }
    Ok(x)
}
