//! Collect-and-update training loop.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{SimConfig, VecEnv};
use crate::error::{Error, Result};
use crate::gae::RolloutBuffer;
use crate::nn::Scalar;
use crate::policy::{sample_action, ActorCritic};
use crate::ppo::{ppo_update, PpoConfig, PpoState};

/// Which disturbance/observation setup an agent is trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// No impulse, trigger not observed.
    Nominal,
    /// Impulse, trigger not observed.
    I,
    /// Impulse and observed trigger.
    It,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Nominal, Variant::I, Variant::It];

    pub fn disturbance(self) -> bool {
        !matches!(self, Variant::Nominal)
    }

    pub fn trigger_obs(self) -> bool {
        matches!(self, Variant::It)
    }

    /// Training configuration for this variant.
    pub fn apply(self, sim: &SimConfig) -> SimConfig {
        let mut out = sim.clone();
        out.env.enable_disturbance = self.disturbance();
        out.env.enable_trigger_obs = self.trigger_obs();
        out
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Nominal => "nominal",
            Variant::I => "i",
            Variant::It => "it",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nominal" => Ok(Variant::Nominal),
            "i" => Ok(Variant::I),
            "it" => Ok(Variant::It),
            other => Err(Error::config(
                "variant",
                format!("unknown variant `{other}` (expected nominal, i or it)"),
            )),
        }
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    /// Mean undiscounted return over recently completed episodes.
    pub mean_return: f64,
    pub mean_episode_len: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub approx_kl: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub model: ActorCritic<F>,
    pub curve: Vec<CurveRow>,
    /// Configuration the agent was trained with (variant applied).
    pub sim: SimConfig,
    pub variant: Variant,
    pub seed: u64,
}

impl<F> TrainOutcome<F> {
    pub fn final_mean_episode_len(&self) -> f64 {
        self.curve.last().map_or(0.0, |r| r.mean_episode_len)
    }
}

/// Completed episodes kept for the running statistics.
const EPISODE_WINDOW: usize = 100;

/// Seed-derived stream for trainer-owned randomness. Environments use
/// streams `0..num_envs` of the plain seed.
fn trainer_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(stream);
    rng
}

fn to_rows<F: Scalar>(obs: &[Vec<f64>], width: usize) -> Array2<F> {
    Array2::from_shape_fn((obs.len(), width), |(i, j)| F::of(obs[i][j]))
}

pub fn train<F: Scalar>(
    sim: &SimConfig,
    ppo: &PpoConfig,
    variant: Variant,
    seed: u64,
) -> Result<TrainOutcome<F>> {
    train_with_progress(sim, ppo, variant, seed, |_| {})
}

/// Like [`train`], calling `progress` after every epoch.
pub fn train_with_progress<F: Scalar>(
    sim: &SimConfig,
    ppo: &PpoConfig,
    variant: Variant,
    seed: u64,
    mut progress: impl FnMut(&CurveRow),
) -> Result<TrainOutcome<F>> {
    ppo.validate()?;
    let sim = variant.apply(sim);
    sim.validate()?;
    let width = sim.env.observation_width();
    let n = ppo.num_envs;

    let mut model = ActorCritic::<F>::new(width, &ppo.hidden, ppo.init_log_std, &mut trainer_rng(seed, 0))
        .with_value_scale(ppo.value_scale);
    let mut opt = PpoState::new(&model, ppo);
    let mut sample_rng = trainer_rng(seed, 1);
    let mut shuffle_rng = trainer_rng(seed, 2);

    let mut envs = VecEnv::new(&sim, n, seed)?.with_threads(ppo.threads);
    let mut obs = to_rows::<F>(&envs.reset_all()?, width);
    let mut buffer = RolloutBuffer::<F>::new(ppo.horizon, n, width);
    let mut running_return = vec![0.0; n];
    let mut running_len = vec![0usize; n];
    let mut finished: VecDeque<(f64, usize)> = VecDeque::with_capacity(EPISODE_WINDOW);
    let mut curve = Vec::with_capacity(ppo.max_epochs);

    for epoch in 0..ppo.max_epochs {
        buffer.clear();
        for _ in 0..ppo.horizon {
            let means = model.action_mean(obs.view())?;
            let values = model.value(obs.view())?;
            let log_std = model.log_std.to_vec();
            let samples: Vec<_> = (0..n)
                .map(|e| sample_action(&means.row(e).to_vec(), &log_std, &mut sample_rng))
                .collect();
            let actions: Vec<[f64; 3]> = samples
                .iter()
                .map(|s| s.clipped.map(|a| a.as_f64()))
                .collect();
            let steps = envs.step_all(&actions)?;

            // time-limit endings bootstrap from the value of the final observation
            let timeouts: Vec<usize> = (0..n).filter(|&e| steps[e].result.info.timeout).collect();
            let timeout_values = if timeouts.is_empty() {
                Vec::new()
            } else {
                let terminal: Vec<Vec<f64>> = timeouts
                    .iter()
                    .map(|&e| steps[e].result.observation.clone())
                    .collect();
                model.value(to_rows::<F>(&terminal, width).view())?.to_vec()
            };

            for e in 0..n {
                let step = &steps[e];
                let mut reward = step.result.reward;
                running_return[e] += reward;
                running_len[e] += 1;
                if let Some(k) = timeouts.iter().position(|&t| t == e) {
                    reward += ppo.gamma * timeout_values[k].as_f64();
                }
                buffer.push(
                    obs.row(e).as_slice().expect("row-major"),
                    &samples[e].raw,
                    samples[e].log_prob,
                    reward,
                    values[e].as_f64(),
                    step.result.terminated,
                );
                if step.result.terminated {
                    if finished.len() == EPISODE_WINDOW {
                        finished.pop_front();
                    }
                    finished.push_back((running_return[e], running_len[e]));
                    running_return[e] = 0.0;
                    running_len[e] = 0;
                }
                for (d, s) in obs.row_mut(e).iter_mut().zip(step.next_observation()) {
                    *d = F::of(*s);
                }
            }
        }
        let last_values: Vec<f64> = model.value(obs.view())?.iter().map(|v| v.as_f64()).collect();
        buffer.finish(&last_values, ppo.gamma, ppo.gae_lambda);
        let stats = ppo_update(&mut model, &mut opt, &buffer, ppo, epoch, &mut shuffle_rng)?;

        let (mean_return, mean_episode_len) = if finished.is_empty() {
            (0.0, 0.0)
        } else {
            let k = finished.len() as f64;
            (
                finished.iter().map(|f| f.0).sum::<f64>() / k,
                finished.iter().map(|f| f.1 as f64).sum::<f64>() / k,
            )
        };
        let row = CurveRow {
            epoch,
            mean_return,
            mean_episode_len,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            approx_kl: stats.approx_kl,
            lr: stats.learning_rate,
        };
        progress(&row);
        curve.push(row);
    }

    Ok(TrainOutcome {
        model,
        curve,
        sim,
        variant,
        seed,
    })
}

pub fn write_curve_csv<W: std::io::Write>(curve: &[CurveRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in curve {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
