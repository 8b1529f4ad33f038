//! Run configuration: a TOML document whose sections mirror the module
//! parameter structs. Omitted keys take their defaults, unknown keys are
//! rejected.
//!
//! ```toml
//! seed = 1
//! [inertial]
//! mass = 3.1
//! [disturbance]
//! trigger_duration = 2.0
//! [ppo]
//! num_envs = 64
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::actuation::RotorParams;
use crate::disturbance::DisturbanceParams;
use crate::env::{EnvConfig, SimConfig};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::ppo::PpoConfig;
use crate::rate_controller::RateCtrlParams;
use crate::rigid_body::InertialParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Seeds for repeated runs; empty means just `seed`.
    pub seeds: Vec<u64>,
    pub out_dir: String,
    pub inertial: InertialParams,
    pub rotor: RotorParams,
    pub rate_ctrl: RateCtrlParams,
    pub disturbance: DisturbanceParams,
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            seeds: Vec::new(),
            out_dir: "runs".into(),
            inertial: InertialParams::default(),
            rotor: RotorParams::default(),
            rate_ctrl: RateCtrlParams::default(),
            disturbance: DisturbanceParams::default(),
            env: EnvConfig::default(),
            ppo: PpoConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim().validate()?;
        self.ppo.validate()?;
        self.eval.validate()?;
        Ok(())
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig {
            env: self.env.clone(),
            inertial: self.inertial,
            rotor: self.rotor,
            rate_ctrl: self.rate_ctrl,
            disturbance: self.disturbance,
        }
    }

    pub fn seed_list(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| {
            let key = e
                .message()
                .split('`')
                .nth(1)
                .map(str::to_owned)
                .unwrap_or_else(|| "<document>".into());
            Error::config(key, e.to_string().trim_end())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }

    /// Short content hash of the resolved configuration.
    pub fn digest(&self) -> String {
        // FNV-1a, stable across builds
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_toml_string().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    RunConfig::from_toml_str(&text).map_err(|e| match e {
        Error::Config { path: key, message } => Error::Config {
            path: key,
            message: format!("{message} (in {})", path.display()),
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn defaults_carry_vehicle_parameters() {
        let c = RunConfig::default();
        assert_eq!(c.inertial.mass, 3.1);
        assert_eq!((c.inertial.jxx, c.inertial.jyy, c.inertial.jzz), (0.039, 0.039, 0.061));
        assert_eq!(c.rotor.arm_length, 0.28);
        assert_eq!(c.rotor.omega_max, 800.0);
        assert_eq!(c.rotor.c_f, 2.5e-5);
        assert_eq!(c.rotor.c_t, 50.0);
        assert_eq!((c.disturbance.f_x_min, c.disturbance.f_x_max), (-1050.0, -950.0));
        assert_eq!(c.disturbance.trigger_duration, 0.5);
        assert_eq!(c.ppo.learning_rate, 1e-4);
        assert_eq!(c.ppo.num_envs, 1024);
        assert_eq!(c.ppo.max_epochs, 1000);
        assert_eq!(c.env.episode_steps, 1000);
    }

    #[test]
    fn negative_mass_names_the_key() {
        let err = RunConfig::from_toml_str("[inertial]\nmass = -1.0\n").unwrap_err();
        assert!(err.to_string().contains("inertial.mass"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = RunConfig::from_toml_str("[inertial]\nmas = 3.0\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("mas"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
        assert!(RunConfig::from_toml_str("bogus = 1\n").is_err());
    }

    #[test]
    fn trigger_duration_round_trips() {
        let c = RunConfig::from_toml_str("[disturbance]\ntrigger_duration = 2.0\n").unwrap();
        assert_eq!(c.disturbance.trigger_duration, 2.0);
        assert!(c.to_toml_string().contains("trigger_duration = 2.0"));
        let back = RunConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.digest(), b.digest());
        b.seed = 9;
        assert_ne!(a.digest(), b.digest());
    }
}
