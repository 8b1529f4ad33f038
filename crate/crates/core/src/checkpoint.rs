//! Versioned JSON checkpoint.
//!
//! Weights are written as `f64` in the shortest round-trip decimal form, so a
//! save/load cycle reproduces an `f32` model bit for bit.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::env::{ACTION_DIM, FRAME_WIDTH};
use crate::error::{Error, Result};
use crate::nn::{Layer, Mlp, Scalar};
use crate::policy::ActorCritic;
use crate::train::{TrainOutcome, Variant};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_width: usize,
    pub frame_width: usize,
    /// Extra past frames in the observation.
    pub history: usize,
    pub trigger_obs: bool,
    pub hidden: Vec<usize>,
    pub actor_outputs: usize,
    pub critic_outputs: usize,
    pub activation: String,
    pub mean_squash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDoc {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Row-major `fan_in x fan_out`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub variant: Variant,
    pub seed: u64,
    pub trained_epochs: usize,
    pub architecture: Architecture,
    pub actor: Vec<LayerDoc>,
    pub critic: Vec<LayerDoc>,
    pub log_std: Vec<f64>,
    /// Per-input observation scale applied before the first layer.
    pub obs_scale: Vec<f64>,
    pub value_scale: f64,
    /// Resolved configuration the agent was trained with.
    pub config: serde_json::Value,
}

fn layers_to_doc<F: Scalar>(mlp: &Mlp<F>) -> Vec<LayerDoc> {
    mlp.layers
        .iter()
        .map(|l| LayerDoc {
            fan_in: l.fan_in(),
            fan_out: l.fan_out(),
            weight: l.weight.iter().map(|x| x.as_f64()).collect(),
            bias: l.bias.iter().map(|x| x.as_f64()).collect(),
        })
        .collect()
}

fn doc_to_layers<F: Scalar>(docs: &[LayerDoc]) -> Result<Mlp<F>> {
    let mut layers = Vec::with_capacity(docs.len());
    for (i, d) in docs.iter().enumerate() {
        if d.bias.len() != d.fan_out {
            return Err(Error::Checkpoint(format!("layer {i}: bias length mismatch")));
        }
        let weight = Array2::from_shape_vec(
            (d.fan_in, d.fan_out),
            d.weight.iter().map(|&x| F::of(x)).collect(),
        )
        .map_err(|e| Error::Checkpoint(format!("layer {i}: {e}")))?;
        if i > 0 && docs[i - 1].fan_out != d.fan_in {
            return Err(Error::Checkpoint(format!("layer {i}: fan-in does not chain")));
        }
        layers.push(Layer {
            weight,
            bias: d.bias.iter().map(|&x| F::of(x)).collect(),
        });
    }
    if layers.is_empty() {
        return Err(Error::Checkpoint("network has no layers".into()));
    }
    Ok(Mlp { layers })
}

impl Checkpoint {
    pub fn from_model<F: Scalar>(
        model: &ActorCritic<F>,
        variant: Variant,
        history: usize,
        trigger_obs: bool,
        seed: u64,
        trained_epochs: usize,
        config: serde_json::Value,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            variant,
            seed,
            trained_epochs,
            architecture: Architecture {
                input_width: model.input_width(),
                frame_width: FRAME_WIDTH,
                history,
                trigger_obs,
                hidden: model.hidden(),
                actor_outputs: ACTION_DIM,
                critic_outputs: 1,
                activation: "elu".into(),
                mean_squash: "tanh".into(),
            },
            actor: layers_to_doc(&model.actor),
            critic: layers_to_doc(&model.critic),
            log_std: model.log_std.iter().map(|x| x.as_f64()).collect(),
            obs_scale: model.obs_scale.iter().map(|x| x.as_f64()).collect(),
            value_scale: model.value_scale,
            config,
        }
    }

    pub fn from_outcome<F: Scalar>(outcome: &TrainOutcome<F>, config: serde_json::Value) -> Self {
        Self::from_model(
            &outcome.model,
            outcome.variant,
            outcome.sim.env.history,
            outcome.sim.env.enable_trigger_obs,
            outcome.seed,
            outcome.curve.len(),
            config,
        )
    }

    pub fn model<F: Scalar>(&self) -> Result<ActorCritic<F>> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let actor = doc_to_layers::<F>(&self.actor)?;
        let critic = doc_to_layers::<F>(&self.critic)?;
        let width = self.architecture.input_width;
        if actor.input_width() != width || critic.input_width() != width {
            return Err(Error::Checkpoint("network input width disagrees with architecture".into()));
        }
        if actor.output_width() != ACTION_DIM || critic.output_width() != 1 {
            return Err(Error::Checkpoint("unexpected output width".into()));
        }
        if !(self.value_scale.is_finite() && self.value_scale > 0.0) {
            return Err(Error::Checkpoint(format!("invalid value_scale {}", self.value_scale)));
        }
        if self.log_std.len() != ACTION_DIM || self.obs_scale.len() != width {
            return Err(Error::Checkpoint("log_std or obs_scale has the wrong length".into()));
        }
        Ok(ActorCritic {
            actor,
            critic,
            log_std: Array1::from_iter(self.log_std.iter().map(|&x| F::of(x))),
            obs_scale: Array1::from_iter(self.obs_scale.iter().map(|&x| F::of(x))),
            value_scale: self.value_scale,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
