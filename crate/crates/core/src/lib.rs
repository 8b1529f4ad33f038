//! Quadrotor simulation and reinforcement learning for rejecting a
//! predictable recoil impulse.
//!
//! The physical plant ([`rigid_body`], [`actuation`], [`rate_controller`]) and
//! the impulse/trigger model ([`disturbance`]) feed an episodic environment
//! ([`env`]). Agents are trained with PPO ([`nn`], [`policy`], [`gae`],
//! [`ppo`], [`train`]) and compared with the metrics in [`eval`].

pub mod actuation;
pub mod checkpoint;
pub mod config;
pub mod disturbance;
pub mod env;
pub mod error;
pub mod eval;
pub mod gae;
pub mod nn;
pub mod policy;
pub mod ppo;
pub mod rate_controller;
pub mod rigid_body;
pub mod trace;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{load_config, RunConfig};
pub use env::{EnvConfig, QuadEnv, SimConfig, VecEnv};
pub use error::{Error, Result};
pub use eval::{compare_policies, run_eval, sweep_h_tt, EpisodeMetrics, EvalConfig, MetricForm};
pub use policy::ActorCritic;
pub use ppo::PpoConfig;
pub use train::{train, CurveRow, TrainOutcome, Variant};
