//! Gaussian actor-critic on top of [`Mlp`].

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::env::{ACTION_DIM, FRAME_WIDTH};
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpCache, Scalar};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// `ln(2π) / 2`
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Per-component input scaling for one observation frame.
pub const FRAME_SCALE: [f64; FRAME_WIDTH] = [
    1.0, 1.0, 1.0, // position error
    0.5, 0.5, 0.5, // velocity
    1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, // rotation
    0.25, 0.25, 0.25, // body rates
    1.0, // trigger
];

pub fn default_obs_scale(width: usize) -> Vec<f64> {
    (0..width).map(|i| FRAME_SCALE[i % FRAME_WIDTH]).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic<F> {
    pub actor: Mlp<F>,
    pub critic: Mlp<F>,
    /// State-independent log standard deviation of the action noise.
    pub log_std: Array1<F>,
    /// Multiplied into raw observations before the first layer.
    pub obs_scale: Array1<F>,
    /// The critic's raw output is in units of `value_scale`.
    pub value_scale: f64,
}

/// Actor forward output. `mean` is already squashed into `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct ActorOutput<F> {
    pub mean: Array2<F>,
    pub log_std: Array1<F>,
    pub cache: MlpCache<F>,
}

impl<F: Scalar> ActorCritic<F> {
    /// Hidden layers use fan-in uniform init; output layers are scaled by
    /// 0.01 so the initial policy commands near-hover.
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        init_log_std: f64,
        rng: &mut R,
    ) -> Self {
        let sizes = |out: usize| {
            let mut s = vec![input];
            s.extend_from_slice(hidden);
            s.push(out);
            s
        };
        let actor = Mlp::init(&sizes(ACTION_DIM), 0.01, rng);
        let critic = Mlp::init(&sizes(1), 0.01, rng);
        Self {
            actor,
            critic,
            log_std: Array1::from_elem(
                ACTION_DIM,
                F::of(init_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)),
            ),
            obs_scale: default_obs_scale(input).into_iter().map(F::of).collect(),
            value_scale: 1.0,
        }
    }

    pub fn with_value_scale(mut self, value_scale: f64) -> Self {
        self.value_scale = value_scale;
        self
    }

    pub fn input_width(&self) -> usize {
        self.actor.input_width()
    }

    pub fn hidden(&self) -> Vec<usize> {
        let s = self.actor.sizes();
        s[1..s.len() - 1].to_vec()
    }

    pub fn scale_observations(&self, obs: ArrayView2<F>) -> Result<Array2<F>> {
        if obs.ncols() != self.obs_scale.len() {
            return Err(Error::ShapeMismatch {
                expected: self.obs_scale.len(),
                found: obs.ncols(),
            });
        }
        Ok(&obs * &self.obs_scale)
    }

    /// Observations are scaled internally; pass raw environment values.
    pub fn forward_actor(&self, obs: ArrayView2<F>) -> Result<ActorOutput<F>> {
        let x = self.scale_observations(obs)?;
        let (raw, cache) = self.actor.forward_cached(x.view())?;
        Ok(ActorOutput {
            mean: raw.mapv(|v| v.tanh()),
            log_std: self.log_std.clone(),
            cache,
        })
    }

    pub fn action_mean(&self, obs: ArrayView2<F>) -> Result<Array2<F>> {
        let x = self.scale_observations(obs)?;
        Ok(self.actor.forward(x.view())?.mapv(|v| v.tanh()))
    }

    pub fn value(&self, obs: ArrayView2<F>) -> Result<Array1<F>> {
        let x = self.scale_observations(obs)?;
        let scale = F::of(self.value_scale);
        Ok(self.critic.forward(x.view())?.column(0).mapv(|v| v * scale))
    }

    /// Every trainable tensor in a fixed order: actor layers, log-std,
    /// critic layers.
    pub fn tensors(&self) -> Vec<&[F]> {
        let mut t = self.actor.tensors();
        t.push(self.log_std.as_slice().expect("contiguous"));
        t.extend(self.critic.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut t = self.actor.tensors_mut();
        t.push(self.log_std.as_slice_mut().expect("contiguous"));
        t.extend(self.critic.tensors_mut());
        t
    }

    /// Number of leading tensors that belong to the actor (including log-std).
    pub fn actor_tensor_count(&self) -> usize {
        2 * self.actor.layers.len() + 1
    }

    pub fn clamp_log_std(&mut self) {
        let (lo, hi) = (F::of(LOG_STD_MIN), F::of(LOG_STD_MAX));
        self.log_std.mapv_inplace(|v| v.max(lo).min(hi));
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            actor: Mlp::zeros(&self.actor.sizes()),
            critic: Mlp::zeros(&self.critic.sizes()),
            log_std: Array1::zeros(self.log_std.len()),
            obs_scale: self.obs_scale.clone(),
            value_scale: self.value_scale,
        }
    }

    pub fn cast<G: Scalar>(&self) -> ActorCritic<G> {
        ActorCritic {
            actor: self.actor.cast(),
            critic: self.critic.cast(),
            log_std: self.log_std.mapv(|x| G::of(x.as_f64())),
            obs_scale: self.obs_scale.mapv(|x| G::of(x.as_f64())),
            value_scale: self.value_scale,
        }
    }
}

/// Log-density of `action` under a diagonal Gaussian.
pub fn gaussian_log_prob<F: Scalar>(action: &[F], mean: &[F], log_std: &[F]) -> F {
    let half_ln_2pi = F::of(HALF_LN_2PI);
    let half = F::of(0.5);
    action
        .iter()
        .zip(mean)
        .zip(log_std)
        .fold(F::zero(), |acc, ((&a, &m), &ls)| {
            let z = (a - m) / ls.exp();
            acc - half * z * z - ls - half_ln_2pi
        })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledAction<F> {
    /// Unclipped Gaussian draw; this is what the log-probability refers to.
    pub raw: [F; ACTION_DIM],
    /// `raw` clipped to `[-1, 1]`, the action sent to the environment.
    pub clipped: [F; ACTION_DIM],
    pub log_prob: F,
}

pub fn sample_action<F: Scalar, R: Rng + ?Sized>(
    mean: &[F],
    log_std: &[F],
    rng: &mut R,
) -> SampledAction<F> {
    let mut raw = [F::zero(); ACTION_DIM];
    for (i, r) in raw.iter_mut().enumerate() {
        let eps: f64 = rng.sample(StandardNormal);
        *r = mean[i] + log_std[i].exp() * F::of(eps);
    }
    let clipped = raw.map(|a| a.max(-F::one()).min(F::one()));
    let log_prob = gaussian_log_prob(&raw, mean, log_std);
    SampledAction {
        raw,
        clipped,
        log_prob,
    }
}
