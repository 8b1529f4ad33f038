//! Clipped-surrogate PPO update with a KL-adaptive learning rate.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::ACTION_DIM;
use crate::error::{Error, Result};
use crate::gae::RolloutBuffer;
use crate::nn::Scalar;
use crate::policy::{gaussian_log_prob, ActorCritic, HALF_LN_2PI};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub learning_rate: f64,
    pub lr_min: f64,
    pub lr_max: f64,
    /// Adjust the learning rate from the KL after every mini-epoch.
    pub adaptive_lr: bool,
    pub kl_target: f64,
    pub clip: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    /// Steps collected per environment between updates.
    pub horizon: usize,
    pub minibatches: usize,
    pub mini_epochs: usize,
    pub num_envs: usize,
    pub max_epochs: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Returns are regressed in units of this constant.
    pub value_scale: f64,
    pub max_grad_norm: f64,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Worker threads for environment stepping.
    pub threads: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            lr_min: 1e-6,
            lr_max: 1e-2,
            adaptive_lr: true,
            kl_target: 0.008,
            clip: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            horizon: 32,
            minibatches: 4,
            mini_epochs: 4,
            num_envs: 1024,
            max_epochs: 1000,
            entropy_coef: 0.0,
            value_coef: 1.0,
            value_scale: 100.0,
            max_grad_norm: 1.0,
            hidden: vec![256, 256, 256],
            init_log_std: -1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            threads: 1,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let p = |k: &str| format!("ppo.{k}");
        let positive = [
            ("learning_rate", self.learning_rate),
            ("lr_min", self.lr_min),
            ("lr_max", self.lr_max),
            ("kl_target", self.kl_target),
            ("max_grad_norm", self.max_grad_norm),
            ("value_scale", self.value_scale),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(p(name), format!("must be > 0, got {v}")));
            }
        }
        if self.lr_min > self.lr_max {
            return Err(Error::config(p("lr_min"), "must not exceed lr_max"));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::config(p("clip"), "must lie in (0, 1)"));
        }
        for (name, v) in [
            ("gamma", self.gamma),
            ("gae_lambda", self.gae_lambda),
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(p(name), format!("must lie in [0, 1], got {v}")));
            }
        }
        for (name, v) in [("entropy_coef", self.entropy_coef), ("value_coef", self.value_coef)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(p(name), format!("must be >= 0, got {v}")));
            }
        }
        for (name, v) in [
            ("horizon", self.horizon),
            ("minibatches", self.minibatches),
            ("mini_epochs", self.mini_epochs),
            ("num_envs", self.num_envs),
            ("threads", self.threads),
        ] {
            if v == 0 {
                return Err(Error::config(p(name), "must be >= 1"));
            }
        }
        if self.minibatches > self.horizon * self.num_envs {
            return Err(Error::config(p("minibatches"), "more minibatches than samples"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config(p("hidden"), "need at least one non-empty hidden layer"));
        }
        if !self.init_log_std.is_finite() {
            return Err(Error::config(p("init_log_std"), "must be finite"));
        }
        Ok(())
    }
}

/// KL-driven learning-rate rule: shrink by 1.5 above twice the target, grow
/// by 1.5 below half of it, clamp to `[min, max]`.
pub fn adapt_lr(lr: f64, approx_kl: f64, kl_target: f64, min: f64, max: f64) -> f64 {
    let next = if approx_kl > 2.0 * kl_target {
        lr / 1.5
    } else if approx_kl < 0.5 * kl_target {
        lr * 1.5
    } else {
        lr
    };
    next.clamp(min, max)
}

/// Per-parameter adaptive moment estimation with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(model: &ActorCritic<F>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<F>> = model
            .tensors()
            .iter()
            .map(|t| vec![F::zero(); t.len()])
            .collect();
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn apply(&mut self, model: &mut ActorCritic<F>, grads: &ActorCritic<F>, lr: f64) {
        self.step += 1;
        let b1 = F::of(self.beta1);
        let b2 = F::of(self.beta2);
        let c1 = F::of(1.0 - self.beta1.powi(self.step));
        let c2 = F::of(1.0 - self.beta2.powi(self.step));
        let lr = F::of(lr);
        let eps = F::of(self.eps);
        let one = F::one();
        for (((param, grad), m), v) in model
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for i in 0..param.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                param[i] = param[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        model.clamp_log_std();
    }
}

/// Scales a group of gradient tensors so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm<F: Scalar>(tensors: &mut [&mut [F]], max_norm: f64) -> f64 {
    let norm = tensors
        .iter()
        .flat_map(|t| t.iter())
        .map(|g| g.as_f64().powi(2))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = F::of(max_norm / (norm + 1e-12));
        tensors
            .iter_mut()
            .for_each(|t| t.iter_mut().for_each(|g| *g = *g * s));
    }
    norm
}

/// One minibatch worth of PPO inputs.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a, F> {
    pub observations: ArrayView2<'a, F>,
    pub actions: ArrayView2<'a, F>,
    pub old_log_probs: &'a [F],
    pub advantages: &'a [F],
    pub returns: &'a [F],
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossStats {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    /// Mean of `(r - 1) - ln r`.
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub max_ratio_deviation: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

impl From<&PpoConfig> for LossWeights {
    fn from(c: &PpoConfig) -> Self {
        Self {
            clip: c.clip,
            value_coef: c.value_coef,
            entropy_coef: c.entropy_coef,
        }
    }
}

/// Total loss
/// `-mean(min(r A, clip(r) A)) + value_coef * 0.5 * mean(((V - R) / s)^2) - entropy_coef * H`
/// where `s` is the model's value scale
/// and its gradient with respect to every parameter of `model`.
pub fn loss_and_grad<F: Scalar>(
    model: &ActorCritic<F>,
    batch: &Batch<'_, F>,
    weights: &LossWeights,
) -> Result<(LossStats, ActorCritic<F>)> {
    let b = batch.observations.nrows();
    let inv_b = 1.0 / b as f64;
    let out = model.forward_actor(batch.observations)?;
    let log_std: Vec<F> = out.log_std.to_vec();
    let std: Vec<f64> = log_std.iter().map(|l| l.as_f64().exp()).collect();

    let mut stats = LossStats::default();
    let mut grad_mean = Array2::<F>::zeros((b, ACTION_DIM));
    let mut grad_log_std = [0.0f64; ACTION_DIM];
    for i in 0..b {
        let mean_row = out.mean.row(i);
        let action_row = batch.actions.row(i);
        let mean: Vec<F> = mean_row.to_vec();
        let action: Vec<F> = action_row.to_vec();
        let log_ratio = (gaussian_log_prob(&action, &mean, &log_std) - batch.old_log_probs[i]).as_f64();
        let ratio = log_ratio.exp();
        let adv = batch.advantages[i].as_f64();
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - weights.clip, 1.0 + weights.clip) * adv;
        stats.policy -= unclipped.min(clipped) * inv_b;
        stats.approx_kl += ((ratio - 1.0) - log_ratio) * inv_b;
        stats.max_ratio_deviation = stats.max_ratio_deviation.max((ratio - 1.0).abs());
        if (ratio - 1.0).abs() > weights.clip {
            stats.clip_fraction += inv_b;
        }
        if unclipped <= clipped {
            // d(loss)/d(log p)
            let g = -adv * ratio * inv_b;
            for j in 0..ACTION_DIM {
                let z = (action[j].as_f64() - mean[j].as_f64()) / std[j];
                grad_mean[[i, j]] = F::of(g * z / std[j]);
                grad_log_std[j] += g * (z * z - 1.0);
            }
        }
    }
    stats.entropy = log_std
        .iter()
        .map(|l| l.as_f64() + 0.5 + HALF_LN_2PI)
        .sum::<f64>();
    for g in grad_log_std.iter_mut() {
        *g -= weights.entropy_coef;
    }

    // through the tanh squash
    let one = F::one();
    let grad_raw = &grad_mean * &out.mean.mapv(|m| one - m * m);
    let actor_grads = model.actor.backward(&out.cache, &grad_raw);

    let scaled = model.scale_observations(batch.observations)?;
    let (values, critic_cache) = model.critic.forward_cached(scaled.view())?;
    // value error measured in units of the critic's output
    let mut grad_values = Array2::<F>::zeros((b, 1));
    for i in 0..b {
        let err = values[[i, 0]].as_f64() - batch.returns[i].as_f64() / model.value_scale;
        stats.value += 0.5 * err * err * inv_b;
        grad_values[[i, 0]] = F::of(weights.value_coef * err * inv_b);
    }
    let critic_grads = model.critic.backward(&critic_cache, &grad_values);

    stats.total =
        stats.policy + weights.value_coef * stats.value - weights.entropy_coef * stats.entropy;
    let grads = ActorCritic {
        actor: actor_grads,
        critic: critic_grads,
        log_std: Array1::from_iter(grad_log_std.iter().map(|&g| F::of(g))),
        obs_scale: model.obs_scale.clone(),
        value_scale: model.value_scale,
    };
    Ok((stats, grads))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub learning_rate: f64,
    pub mini_epochs_run: usize,
    /// Largest `|r - 1|` in the first minibatch, evaluated before any
    /// parameter update of this call.
    pub first_pass_ratio_deviation: f64,
}

/// Optimizer state carried across updates.
#[derive(Debug, Clone)]
pub struct PpoState<F> {
    pub adam: Adam<F>,
    pub learning_rate: f64,
}

impl<F: Scalar> PpoState<F> {
    pub fn new(model: &ActorCritic<F>, config: &PpoConfig) -> Self {
        Self {
            adam: Adam::new(model, config.adam_beta1, config.adam_beta2, config.adam_eps),
            learning_rate: config.learning_rate,
        }
    }
}

/// Runs the mini-epoch loop over a finished rollout buffer.
pub fn ppo_update<F: Scalar, R: Rng + ?Sized>(
    model: &mut ActorCritic<F>,
    state: &mut PpoState<F>,
    buffer: &RolloutBuffer<F>,
    config: &PpoConfig,
    epoch: usize,
    rng: &mut R,
) -> Result<UpdateStats> {
    assert!(buffer.is_full(), "ppo_update needs a full buffer");
    let n = buffer.len();
    let advantages: Vec<F> = buffer.advantages.iter().map(|&a| F::of(a)).collect();
    let returns: Vec<F> = buffer.returns.iter().map(|&r| F::of(r)).collect();
    let weights = LossWeights::from(config);
    let mb_size = n / config.minibatches;
    let mut indices: Vec<usize> = (0..n).collect();
    let mut stats = UpdateStats::default();
    let actor_tensors = model.actor_tensor_count();

    for mini_epoch in 0..config.mini_epochs {
        indices.shuffle(rng);
        let (mut policy, mut value, mut kl, mut clip_frac) = (0.0, 0.0, 0.0, 0.0);
        for mb in 0..config.minibatches {
            let idx = &indices[mb * mb_size..(mb + 1) * mb_size];
            let obs = buffer.observations.select(Axis(0), idx);
            let act = buffer.actions.select(Axis(0), idx);
            let old: Vec<F> = idx.iter().map(|&i| buffer.log_probs[i]).collect();
            let adv: Vec<F> = idx.iter().map(|&i| advantages[i]).collect();
            let ret: Vec<F> = idx.iter().map(|&i| returns[i]).collect();
            let batch = Batch {
                observations: obs.view(),
                actions: act.view(),
                old_log_probs: &old,
                advantages: &adv,
                returns: &ret,
            };
            let (loss, mut grads) = loss_and_grad(model, &batch, &weights)?;
            if !loss.total.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    what: format!("non-finite loss in mini-epoch {mini_epoch}"),
                });
            }
            if mini_epoch == 0 && mb == 0 {
                stats.first_pass_ratio_deviation = loss.max_ratio_deviation;
            }
            {
                let mut t = grads.tensors_mut();
                let (actor, critic) = t.split_at_mut(actor_tensors);
                clip_grad_norm(actor, config.max_grad_norm);
                clip_grad_norm(critic, config.max_grad_norm);
            }
            state.adam.apply(model, &grads, state.learning_rate);
            policy += loss.policy;
            value += loss.value;
            kl += loss.approx_kl;
            clip_frac += loss.clip_fraction;
        }
        let m = config.minibatches as f64;
        stats.policy_loss = policy / m;
        stats.value_loss = value / m;
        stats.approx_kl = kl / m;
        stats.clip_fraction = clip_frac / m;
        stats.mini_epochs_run = mini_epoch + 1;
        if !model.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                what: "non-finite parameters".into(),
            });
        }
        if config.adaptive_lr {
            state.learning_rate = adapt_lr(
                state.learning_rate,
                stats.approx_kl,
                config.kl_target,
                config.lr_min,
                config.lr_max,
            );
        }
        if stats.approx_kl > 1.5 * config.kl_target {
            log::debug!(
                "stopping after mini-epoch {mini_epoch}: kl {:.4} above 1.5x target",
                stats.approx_kl
            );
            break;
        }
    }
    stats.learning_rate = state.learning_rate;
    Ok(stats)
}
