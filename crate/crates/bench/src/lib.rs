//! Fixtures shared by the hot-path benchmarks.

use impulse_core::policy::sample_action;
use impulse_core::ActorCritic;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Network shape used in training: 19-wide frames, three hidden layers.
pub const HIDDEN: [usize; 3] = [64, 64, 64];

/// A freshly initialised training-precision model.
pub fn model(input: usize, seed: u64) -> ActorCritic<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ActorCritic::new(input, &HIDDEN, -1.0, &mut rng)
}

/// Flat row-major buffers for one PPO mini-batch drawn from `model`.
pub struct MiniBatch {
    pub observations: Vec<f32>,
    pub actions: Vec<f32>,
    pub old_log_probs: Vec<f32>,
    pub advantages: Vec<f32>,
    pub returns: Vec<f32>,
}

pub fn mini_batch(model: &ActorCritic<f32>, rows: usize, seed: u64) -> MiniBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = model.input_width();
    let observations: Vec<f32> = (0..rows * width).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let obs = ndarray::ArrayView2::from_shape((rows, width), &observations).expect("shape");
    let means = model.action_mean(obs).expect("forward");
    let log_std = model.log_std.to_vec();
    let mut actions = Vec::with_capacity(rows * 3);
    let mut old_log_probs = Vec::with_capacity(rows);
    for row in means.rows() {
        let s = sample_action(&row.to_vec(), &log_std, &mut rng);
        actions.extend_from_slice(&s.raw);
        old_log_probs.push(s.log_prob);
    }
    MiniBatch {
        observations,
        actions,
        old_log_probs,
        advantages: (0..rows).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        returns: (0..rows).map(|_| rng.gen_range(-50.0..50.0)).collect(),
    }
}

/// Deterministic pseudo-random normalized actions.
pub fn actions(n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)])
        .collect()
}
