//! Per-step trajectory rows and their CSV form.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::env::{QuadEnv, StepResult};
use crate::error::Result;

/// Column order is the CSV header order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub p_x: f64,
    pub p_y: f64,
    pub p_z: f64,
    pub e_x: f64,
    pub e_y: f64,
    pub e_z: f64,
    pub v_x: f64,
    pub v_y: f64,
    pub v_z: f64,
    pub w_x: f64,
    pub w_y: f64,
    pub w_z: f64,
    pub u_thrust: f64,
    pub u_wx: f64,
    pub u_wy: f64,
    pub o_t: f64,
    pub fd_x: f64,
    pub reward: f64,
    pub episode_id: usize,
}

pub const TRACE_COLUMNS: [&str; 20] = [
    "t", "p_x", "p_y", "p_z", "e_x", "e_y", "e_z", "v_x", "v_y", "v_z", "w_x", "w_y", "w_z",
    "u_thrust", "u_wx", "u_wy", "o_t", "fd_x", "reward", "episode_id",
];

impl TraceRow {
    /// Row for the step that just produced `result` in `env`.
    pub fn record(env: &QuadEnv, result: &StepResult, episode_id: usize) -> Self {
        let s = env.state();
        let e = result.info.position_error;
        let u = result.info.action;
        Self {
            t: result.info.time,
            p_x: s.position.x,
            p_y: s.position.y,
            p_z: s.position.z,
            e_x: e.x,
            e_y: e.y,
            e_z: e.z,
            v_x: s.velocity.x,
            v_y: s.velocity.y,
            v_z: s.velocity.z,
            w_x: s.angular_velocity.x,
            w_y: s.angular_velocity.y,
            w_z: s.angular_velocity.z,
            u_thrust: u[0],
            u_wx: u[1],
            u_wy: u[2],
            o_t: result.info.trigger,
            fd_x: result.info.disturbance.x,
            reward: result.reward,
            episode_id,
        }
    }

    pub fn action(&self) -> [f64; 3] {
        [self.u_thrust, self.u_wx, self.u_wy]
    }

    pub fn error(&self) -> [f64; 3] {
        [self.e_x, self.e_y, self.e_z]
    }
}

pub fn write_trace_csv<'a, W: Write>(rows: impl IntoIterator<Item = &'a TraceRow>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(reader: R) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize().map(|row| Ok(row?)).collect()
}
