//! Episodic hover task under a recoil impulse.
//!
//! One [`QuadEnv`] owns its vehicle state, disturbance event, observation
//! history and random stream. [`VecEnv`] steps many of them with automatic
//! reset, optionally fanned out over worker threads; per-env work never
//! shares state, so results do not depend on the worker count.

use std::collections::VecDeque;

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::actuation::{Mixer, RotorParams};
use crate::disturbance::{
    disturbance_force, sample_event, trigger_value, DisturbanceEvent, DisturbanceParams,
};
use crate::error::{Error, Result};
use crate::rate_controller::{compute_rotor_commands, RateCommand, RateCtrlParams};
use crate::rigid_body::{integrate_step, InertialParams, RigidBodyState};

/// Width of one observation frame: `e_p (3), v (3), R (9), w (3), o_t (1)`.
pub const FRAME_WIDTH: usize = 19;
pub const ACTION_DIM: usize = 3;

pub fn observation_width(history: usize) -> usize {
    FRAME_WIDTH * (history + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Hover reference, m.
    pub reference: [f64; 3],
    pub episode_steps: usize,
    pub dt: f64,
    /// Number of extra past frames stacked into the observation.
    pub history: usize,
    /// Slope of the per-axis position reward, 1/m.
    pub alpha: f64,
    /// Control-effort weight.
    pub k_u: f64,
    /// Penalty on leaving the error ball.
    pub failure_penalty: f64,
    /// Radius of the error ball, m.
    pub max_error: f64,
    pub init_pos_range: f64,
    pub init_att_range: f64,
    pub init_vel_range: f64,
    /// Body-rate command at full action, rad/s.
    pub max_rate: f64,
    /// Yaw rate handed to the rate loop, rad/s.
    pub yaw_rate: f64,
    pub enable_disturbance: bool,
    pub enable_trigger_obs: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            reference: [0.0; 3],
            episode_steps: 1000,
            dt: 0.01,
            history: 0,
            alpha: 0.5,
            k_u: 0.01,
            failure_penalty: 10.0,
            max_error: 3.0,
            init_pos_range: 1.0,
            init_att_range: 0.2,
            init_vel_range: 0.5,
            max_rate: 6.0,
            yaw_rate: 0.0,
            enable_disturbance: true,
            enable_trigger_obs: true,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let p = |k: &str| format!("env.{k}");
        if !self.reference.iter().all(|x| x.is_finite()) {
            return Err(Error::config(p("reference"), "must be finite"));
        }
        if self.episode_steps == 0 {
            return Err(Error::config(p("episode_steps"), "must be > 0"));
        }
        for (name, value) in [
            ("dt", self.dt),
            ("alpha", self.alpha),
            ("max_error", self.max_error),
            ("max_rate", self.max_rate),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(p(name), format!("must be > 0, got {value}")));
            }
        }
        for (name, value) in [
            ("k_u", self.k_u),
            ("failure_penalty", self.failure_penalty),
            ("init_pos_range", self.init_pos_range),
            ("init_att_range", self.init_att_range),
            ("init_vel_range", self.init_vel_range),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::config(p(name), format!("must be >= 0, got {value}")));
            }
        }
        if !self.yaw_rate.is_finite() {
            return Err(Error::config(p("yaw_rate"), "must be finite"));
        }
        Ok(())
    }

    pub fn observation_width(&self) -> usize {
        observation_width(self.history)
    }

    pub fn episode_length(&self) -> f64 {
        self.episode_steps as f64 * self.dt
    }

    pub fn reference(&self) -> Vector3<f64> {
        Vector3::from(self.reference)
    }
}

/// Everything needed to build an environment instance.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub env: EnvConfig,
    pub inertial: InertialParams,
    pub rotor: RotorParams,
    pub rate_ctrl: RateCtrlParams,
    pub disturbance: DisturbanceParams,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.inertial.validate()?;
        self.rotor.validate()?;
        self.rate_ctrl.validate()?;
        self.disturbance.validate()?;
        if self.env.enable_disturbance {
            // surfaces an infeasible schedule at load time rather than at reset
            sample_event(
                &self.disturbance,
                self.env.episode_length(),
                self.env.dt,
                &mut ChaCha8Rng::seed_from_u64(0),
            )?;
        }
        Ok(())
    }
}

/// Position reward with control-effort penalty, or `-failure_penalty` outside
/// the error ball.
pub fn compute_reward(position_error: &Vector3<f64>, action: &[f64; 3], config: &EnvConfig) -> f64 {
    if position_error.norm() >= config.max_error {
        return -config.failure_penalty;
    }
    let axis = |e: f64| (1.0 - config.alpha * e.abs()).max(0.0);
    let position = (axis(position_error.x) * axis(position_error.y) * axis(position_error.z)).powi(2);
    let effort = action.iter().map(|u| u * u).sum::<f64>();
    position - config.k_u * effort
}

/// Maps a normalized action in `[-1, 1]^3` to the rate-loop command.
pub fn denormalize_action(action: &[f64; 3], config: &EnvConfig, inertial: &InertialParams) -> RateCommand {
    RateCommand {
        thrust: action[0] * inertial.hover_thrust(),
        rate_x: action[1] * config.max_rate,
        rate_y: action[2] * config.max_rate,
    }
}

pub fn clip_action(action: &[f64; 3]) -> [f64; 3] {
    action.map(|u| if u.is_nan() { 0.0 } else { u.clamp(-1.0, 1.0) })
}

type Frame = [f64; FRAME_WIDTH];

/// Fixed-length frame history, oldest first.
#[derive(Debug, Clone)]
pub struct FrameHistory {
    frames: VecDeque<Frame>,
    len: usize,
}

impl FrameHistory {
    pub fn new(history: usize) -> Self {
        Self {
            frames: VecDeque::with_capacity(history + 1),
            len: history + 1,
        }
    }

    /// Back-fills every slot with `frame`.
    pub fn fill(&mut self, frame: Frame) {
        self.frames.clear();
        self.frames.extend(std::iter::repeat_n(frame, self.len));
    }

    pub fn frames(&self) -> impl Iterator<Item = &Frame> {
        self.frames.iter()
    }
}

/// Pushes `current` into the history, dropping the oldest frame, and returns
/// the stacked observation (newest last).
pub fn build_observation(history: &mut FrameHistory, current: Frame) -> Vec<f64> {
    if history.frames.len() == history.len {
        history.frames.pop_front();
    }
    history.frames.push_back(current);
    while history.frames.len() < history.len {
        history.frames.push_front(current);
    }
    history.frames.iter().flatten().copied().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    /// Simulation time after the step, s.
    pub time: f64,
    pub position_error: Vector3<f64>,
    /// Body-frame force applied during the step, N.
    pub disturbance: Vector3<f64>,
    /// Trigger value at the post-step time, regardless of whether it is observed.
    pub trigger: f64,
    pub saturated: bool,
    /// Clipped normalized action that was applied.
    pub action: [f64; 3],
    /// Set when the episode ended on the step budget rather than on failure.
    pub timeout: bool,
    /// Set when the integration step failed and the episode was ended.
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
pub struct QuadEnv {
    config: SimConfig,
    mixer: Mixer,
    state: RigidBodyState,
    event: Option<DisturbanceEvent>,
    history: FrameHistory,
    step_count: usize,
    done: bool,
    rng: ChaCha8Rng,
}

fn uniform<R: Rng>(rng: &mut R, range: f64) -> f64 {
    if range > 0.0 {
        rng.gen_range(-range..=range)
    } else {
        0.0
    }
}

impl QuadEnv {
    /// Creates an environment whose random stream is `(seed, stream)`.
    pub fn new(config: SimConfig, seed: u64, stream: u64) -> Result<Self> {
        config.validate()?;
        let mixer = Mixer::new(config.rotor)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let history = FrameHistory::new(config.env.history);
        Ok(Self {
            config,
            mixer,
            state: RigidBodyState::default(),
            event: None,
            history,
            step_count: 0,
            done: true,
            rng,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn state(&self) -> &RigidBodyState {
        &self.state
    }

    pub fn event(&self) -> Option<&DisturbanceEvent> {
        self.event.as_ref()
    }

    pub fn time(&self) -> f64 {
        self.step_count as f64 * self.config.env.dt
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn position_error(&self) -> Vector3<f64> {
        self.state.position - self.config.env.reference()
    }

    /// Trigger value at the current time (0 when no event is scheduled).
    pub fn trigger(&self) -> f64 {
        self.event
            .as_ref()
            .map_or(0.0, |e| trigger_value(e, self.time()))
    }

    fn frame(&self) -> Frame {
        let s = &self.state;
        let e = self.position_error();
        let mut f = [0.0; FRAME_WIDTH];
        f[0..3].copy_from_slice(e.as_slice());
        f[3..6].copy_from_slice(s.velocity.as_slice());
        for r in 0..3 {
            for c in 0..3 {
                f[6 + 3 * r + c] = s.rotation[(r, c)];
            }
        }
        f[15..18].copy_from_slice(s.angular_velocity.as_slice());
        f[18] = if self.config.env.enable_trigger_obs {
            self.trigger()
        } else {
            0.0
        };
        f
    }

    pub fn reset(&mut self) -> Result<Vec<f64>> {
        let env = &self.config.env;
        let rng = &mut self.rng;
        let offset = Vector3::new(
            uniform(rng, env.init_pos_range),
            uniform(rng, env.init_pos_range),
            uniform(rng, env.init_pos_range),
        );
        let (roll, pitch, yaw) = (
            uniform(rng, env.init_att_range),
            uniform(rng, env.init_att_range),
            uniform(rng, env.init_att_range),
        );
        let velocity = Vector3::new(
            uniform(rng, env.init_vel_range),
            uniform(rng, env.init_vel_range),
            uniform(rng, env.init_vel_range),
        );
        self.state = RigidBodyState {
            position: env.reference() + offset,
            velocity,
            rotation: *Rotation3::from_euler_angles(roll, pitch, yaw).matrix(),
            angular_velocity: Vector3::zeros(),
        };
        self.event = if env.enable_disturbance {
            Some(sample_event(
                &self.config.disturbance,
                env.episode_length(),
                env.dt,
                &mut self.rng,
            )?)
        } else {
            None
        };
        self.step_count = 0;
        self.done = false;
        let frame = self.frame();
        self.history.fill(frame);
        Ok(self.history.frames().flatten().copied().collect())
    }

    /// Overrides the vehicle state; meant for tests and scripted scenarios.
    pub fn set_state(&mut self, state: RigidBodyState) {
        self.state = state;
        let frame = self.frame();
        self.history.fill(frame);
    }

    pub fn set_event(&mut self, event: Option<DisturbanceEvent>) {
        self.event = event;
    }

    pub fn step(&mut self, action: &[f64; 3]) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let cfg = &self.config;
        let action = clip_action(action);
        let command = denormalize_action(&action, &cfg.env, &cfg.inertial);
        let rotors = compute_rotor_commands(
            &command,
            cfg.env.yaw_rate,
            &self.state,
            &cfg.inertial,
            &self.mixer,
            &cfg.rate_ctrl,
        );
        let wrench = self.mixer.rotor_speeds_to_wrench(&rotors.omegas)?;
        let t = self.time();
        let disturbance = match &self.event {
            Some(e) => disturbance_force(e, t, &mut self.rng),
            None => Vector3::zeros(),
        };
        // A saturated mixer can spin the yaw axis up far enough for the fixed
        // step integrator to lose the rotation; such a step ends the episode
        // as a failure and leaves the last valid state in place.
        let diverged = match integrate_step(
            &self.state,
            wrench.thrust,
            &wrench.torque,
            &disturbance,
            &cfg.inertial,
            cfg.env.dt,
        ) {
            Ok(next) if next.is_finite() => {
                self.state = next;
                false
            }
            Ok(_) | Err(Error::DegenerateRotation { .. }) | Err(Error::InvalidState(_)) => true,
            Err(e) => return Err(e),
        };
        self.step_count += 1;

        let position_error = self.position_error();
        let failed = diverged || position_error.norm() >= self.config.env.max_error;
        let reward = if diverged {
            -self.config.env.failure_penalty
        } else {
            compute_reward(&position_error, &action, &self.config.env)
        };
        let timeout = !failed && self.step_count >= self.config.env.episode_steps;
        self.done = failed || timeout;

        let frame = self.frame();
        let observation = build_observation(&mut self.history, frame);
        Ok(StepResult {
            observation,
            reward,
            terminated: self.done,
            info: StepInfo {
                time: self.time(),
                position_error,
                disturbance,
                trigger: self.trigger(),
                saturated: rotors.saturated,
                action,
                timeout,
                diverged,
            },
        })
    }
}

/// Result of one batched step for a single environment.
#[derive(Debug, Clone, PartialEq)]
pub struct VecStep {
    pub result: StepResult,
    /// Observation of the fresh episode when the env was auto-reset.
    pub reset_observation: Option<Vec<f64>>,
}

impl VecStep {
    /// Observation the policy should act on next.
    pub fn next_observation(&self) -> &[f64] {
        self.reset_observation
            .as_deref()
            .unwrap_or(&self.result.observation)
    }
}

/// A batch of independent environments. Env `i` draws from stream `i` of the
/// base seed.
#[derive(Debug, Clone)]
pub struct VecEnv {
    envs: Vec<QuadEnv>,
    threads: usize,
}

impl VecEnv {
    pub fn new(config: &SimConfig, num_envs: usize, seed: u64) -> Result<Self> {
        let envs = (0..num_envs as u64)
            .map(|i| QuadEnv::new(config.clone(), seed, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { envs, threads: 1 })
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads.max(1);
        self
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn envs(&self) -> &[QuadEnv] {
        &self.envs
    }

    pub fn reset_all(&mut self) -> Result<Vec<Vec<f64>>> {
        self.envs.iter_mut().map(QuadEnv::reset).collect()
    }

    pub fn step_all(&mut self, actions: &[[f64; 3]]) -> Result<Vec<VecStep>> {
        assert_eq!(actions.len(), self.envs.len(), "one action per env");
        let step_one = |env: &mut QuadEnv, action: &[f64; 3]| -> Result<VecStep> {
            let result = env.step(action)?;
            let reset_observation = if result.terminated {
                Some(env.reset()?)
            } else {
                None
            };
            Ok(VecStep {
                result,
                reset_observation,
            })
        };
        if self.threads <= 1 || self.envs.len() < 2 {
            return self
                .envs
                .iter_mut()
                .zip(actions)
                .map(|(e, a)| step_one(e, a))
                .collect();
        }
        let chunk = self.envs.len().div_ceil(self.threads);
        let per_chunk: Vec<Result<Vec<VecStep>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = self
                .envs
                .chunks_mut(chunk)
                .zip(actions.chunks(chunk))
                .map(|(envs, acts)| {
                    scope.spawn(move || {
                        envs.iter_mut()
                            .zip(acts)
                            .map(|(e, a)| step_one(e, a))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("env worker panicked"))
                .collect()
        });
        let mut out = Vec::with_capacity(self.envs.len());
        for part in per_chunk {
            out.extend(part?);
        }
        Ok(out)
    }
}
