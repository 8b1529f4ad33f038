//! Control allocation between rotor speeds and the body wrench.

use nalgebra::{Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RotorParams {
    /// Thrust coefficient, N s^2 / rad^2.
    pub c_f: f64,
    /// Yaw drag-to-thrust ratio.
    pub c_t: f64,
    /// Rotor distance from the geometric center, m.
    pub arm_length: f64,
    /// Maximum rotor speed, rad/s.
    pub omega_max: f64,
}

impl Default for RotorParams {
    fn default() -> Self {
        Self {
            c_f: 2.5e-5,
            c_t: 50.0,
            arm_length: 0.28,
            omega_max: 800.0,
        }
    }
}

impl RotorParams {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("c_f", self.c_f),
            ("arm_length", self.arm_length),
            ("omega_max", self.omega_max),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(
                    format!("rotor.{name}"),
                    format!("must be finite and > 0, got {value}"),
                ));
            }
        }
        if !(self.c_t.is_finite() && self.c_t != 0.0) {
            return Err(Error::config("rotor.c_t", "must be finite and non-zero"));
        }
        Ok(())
    }

    /// Arm length projected on the body axes (`d cos 45°`).
    pub fn d45(&self) -> f64 {
        self.arm_length * std::f64::consts::FRAC_PI_4.cos()
    }

    pub fn max_rotor_thrust(&self) -> f64 {
        self.c_f * self.omega_max * self.omega_max
    }

    pub fn allocation_matrix(&self) -> Matrix4<f64> {
        let d = self.d45();
        let c = self.c_t;
        Matrix4::new(
            1.0, 1.0, 1.0, 1.0, //
            d, d, -d, -d, //
            -d, d, d, -d, //
            c, -c, c, -c,
        )
    }
}

/// Collective thrust (N) and body torques (N m).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench {
    pub thrust: f64,
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn new(thrust: f64, torque: Vector3<f64>) -> Self {
        Self { thrust, torque }
    }

    fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.thrust, self.torque.x, self.torque.y, self.torque.z)
    }

    fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], Vector3::new(v[1], v[2], v[3]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotorCommand {
    pub omegas: [f64; 4],
    /// Set when at least one rotor thrust was clamped.
    pub saturated: bool,
}

/// Allocation matrix with its inverse precomputed.
#[derive(Debug, Clone, Copy)]
pub struct Mixer {
    params: RotorParams,
    allocation: Matrix4<f64>,
    inverse: Matrix4<f64>,
}

impl Mixer {
    pub fn new(params: RotorParams) -> Result<Self> {
        params.validate()?;
        let allocation = params.allocation_matrix();
        let inverse = allocation
            .try_inverse()
            .ok_or_else(|| Error::config("rotor", "allocation matrix is singular"))?;
        Ok(Self {
            params,
            allocation,
            inverse,
        })
    }

    pub fn params(&self) -> &RotorParams {
        &self.params
    }

    pub fn rotor_speeds_to_wrench(&self, omegas: &[f64; 4]) -> Result<Wrench> {
        let mut thrusts = Vector4::zeros();
        for (i, &omega) in omegas.iter().enumerate() {
            if !(0.0..=self.params.omega_max).contains(&omega) {
                return Err(Error::RotorSpeedOutOfRange {
                    index: i,
                    omega,
                    max: self.params.omega_max,
                });
            }
            thrusts[i] = self.params.c_f * omega * omega;
        }
        Ok(Wrench::from_vector(&(self.allocation * thrusts)))
    }

    pub fn wrench_to_rotor_speeds(&self, wrench: &Wrench) -> RotorCommand {
        let thrusts = self.inverse * wrench.as_vector();
        let t_max = self.params.max_rotor_thrust();
        let mut saturated = false;
        let mut omegas = [0.0; 4];
        for (omega, &t) in omegas.iter_mut().zip(thrusts.iter()) {
            let clamped = if t.is_nan() { 0.0 } else { t.clamp(0.0, t_max) };
            // round-off around zero thrust is not saturation
            if (clamped - t).abs() > 1e-9 * t_max {
                saturated = true;
            }
            *omega = (clamped / self.params.c_f).sqrt().min(self.params.omega_max);
        }
        RotorCommand { omegas, saturated }
    }
}

pub fn rotor_speeds_to_wrench(omegas: &[f64; 4], params: &RotorParams) -> Result<Wrench> {
    Mixer::new(*params)?.rotor_speeds_to_wrench(omegas)
}

pub fn wrench_to_rotor_speeds(wrench: &Wrench, params: &RotorParams) -> Result<RotorCommand> {
    Ok(Mixer::new(*params)?.wrench_to_rotor_speeds(wrench))
}
