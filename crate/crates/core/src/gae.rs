//! Rollout storage and generalized advantage estimation.

use ndarray::Array2;

use crate::env::ACTION_DIM;
use crate::nn::Scalar;

/// Fixed-capacity rollout storage, step-major: row `t * num_envs + e`.
#[derive(Debug, Clone)]
pub struct RolloutBuffer<F> {
    pub num_envs: usize,
    pub horizon: usize,
    pub observations: Array2<F>,
    /// Unclipped sampled actions.
    pub actions: Array2<F>,
    pub log_probs: Vec<F>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// Episode ended after this step (failure or step budget).
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    len: usize,
}

impl<F: Scalar> RolloutBuffer<F> {
    pub fn new(horizon: usize, num_envs: usize, obs_width: usize) -> Self {
        let cap = horizon * num_envs;
        Self {
            num_envs,
            horizon,
            observations: Array2::zeros((cap, obs_width)),
            actions: Array2::zeros((cap, ACTION_DIM)),
            log_probs: vec![F::zero(); cap],
            rewards: vec![0.0; cap],
            values: vec![0.0; cap],
            dones: vec![false; cap],
            advantages: vec![0.0; cap],
            returns: vec![0.0; cap],
            len: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.horizon * self.num_envs
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_full(&self) -> bool {
        self.len == self.capacity()
    }

    pub fn clear(&mut self) {
        self.len = 0;
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        observation: &[F],
        action: &[F; ACTION_DIM],
        log_prob: F,
        reward: f64,
        value: f64,
        done: bool,
    ) {
        assert!(!self.is_full(), "rollout buffer overflow");
        let i = self.len;
        self.observations
            .row_mut(i)
            .iter_mut()
            .zip(observation)
            .for_each(|(d, s)| *d = *s);
        self.actions
            .row_mut(i)
            .iter_mut()
            .zip(action)
            .for_each(|(d, s)| *d = *s);
        self.log_probs[i] = log_prob;
        self.rewards[i] = reward;
        self.values[i] = value;
        self.dones[i] = done;
        self.len += 1;
    }

    /// Fills `advantages` (normalized) and `returns` (from raw advantages).
    pub fn finish(&mut self, last_values: &[f64], gamma: f64, lambda: f64) {
        assert!(self.is_full(), "advantages need a full buffer");
        let (adv, ret) = gae_advantages(
            &self.rewards,
            &self.values,
            &self.dones,
            last_values,
            gamma,
            lambda,
        );
        self.advantages = adv;
        self.returns = ret;
        normalize_advantages(&mut self.advantages);
    }
}

/// GAE over a step-major batch of `last_values.len()` environments.
///
/// `dones[t]` cuts the recursion after step `t`. Returns `(advantages,
/// returns)` with `returns = advantages + values`.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_values: &[f64],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = last_values.len();
    assert!(n > 0 && rewards.len().is_multiple_of(n), "ragged rollout");
    assert_eq!(rewards.len(), values.len());
    assert_eq!(rewards.len(), dones.len());
    let steps = rewards.len() / n;
    let mut advantages = vec![0.0; rewards.len()];
    for (e, &last) in last_values.iter().enumerate() {
        let mut next_adv = 0.0;
        let mut next_value = last;
        for t in (0..steps).rev() {
            let i = t * n + e;
            let live = if dones[i] { 0.0 } else { 1.0 };
            let delta = rewards[i] + gamma * next_value * live - values[i];
            next_adv = delta + gamma * lambda * live * next_adv;
            advantages[i] = next_adv;
            next_value = values[i];
        }
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    (advantages, returns)
}

/// Shifts and scales to zero mean and unit (population) std.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let scale = if std > 1e-12 { 1.0 / std } else { 1.0 };
    adv.iter_mut().for_each(|a| *a = (*a - mean) * scale);
}
