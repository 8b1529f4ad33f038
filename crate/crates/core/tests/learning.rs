//! Network, advantage estimation, PPO update and checkpoint properties.

mod common;

use common::{first_pass_ratio_deviation, gae_oracle_max_error, ppo_gradient_check};
use impulse_core::gae::RolloutBuffer;
use impulse_core::policy::sample_action;
use impulse_core::ppo::{ppo_update, PpoConfig, PpoState};
use impulse_core::train::Variant;
use impulse_core::{ActorCritic, Checkpoint};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn full_loss_gradient_matches_finite_differences() {
    let worst = ppo_gradient_check(100, 3);
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

#[test]
fn lambda_one_advantages_are_discounted_sums() {
    let worst = gae_oracle_max_error(100, 9);
    assert!(worst < 1e-10, "max abs error {worst:e}");
}

#[test]
fn probability_ratio_is_one_before_the_first_update() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = ActorCritic::<f64>::new(19, &[32, 32, 32], -1.0, &mut rng);
    assert!(first_pass_ratio_deviation(&model, 256, 1) < 1e-12);
    let model = common::random_small_model(&mut rng);
    assert!(first_pass_ratio_deviation(&model, 256, 2) < 1e-12);
}

fn filled_buffer(model: &ActorCritic<f64>, horizon: usize, envs: usize, seed: u64) -> RolloutBuffer<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = model.input_width();
    let mut buffer = RolloutBuffer::<f64>::new(horizon, envs, width);
    for _ in 0..horizon * envs {
        let obs = Array2::from_shape_fn((1, width), |_| rng.gen_range(-1.0..1.0));
        let mean = model.action_mean(obs.view()).unwrap();
        let s = sample_action(&mean.row(0).to_vec(), &model.log_std.to_vec(), &mut rng);
        let value = model.value(obs.view()).unwrap()[0];
        buffer.push(
            obs.row(0).as_slice().unwrap(),
            &s.raw,
            s.log_prob,
            rng.gen_range(-1.0..1.0),
            value,
            rng.gen_bool(0.05),
        );
    }
    let last: Vec<f64> = (0..envs).map(|_| rng.gen_range(-1.0..1.0)).collect();
    buffer.finish(&last, 0.99, 0.95);
    buffer
}

#[test]
fn update_starts_from_unit_ratio_and_moves_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut model = ActorCritic::<f64>::new(19, &[16, 16], -1.0, &mut rng);
    let before = model.clone();
    let buffer = filled_buffer(&model, 16, 8, 1);
    let config = PpoConfig {
        hidden: vec![16, 16],
        ..Default::default()
    };
    let mut state = PpoState::new(&model, &config);
    let stats = ppo_update(&mut model, &mut state, &buffer, &config, 0, &mut rng).unwrap();
    assert!(stats.first_pass_ratio_deviation < 1e-12, "{}", stats.first_pass_ratio_deviation);
    assert!(stats.mini_epochs_run >= 1);
    assert_ne!(model, before);
    assert!(model.is_finite());
}

#[test]
fn normalized_advantage_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = ActorCritic::<f64>::new(19, &[8], -1.0, &mut rng);
    let buffer = filled_buffer(&model, 32, 16, 5);
    let n = buffer.advantages.len() as f64;
    let mean = buffer.advantages.iter().sum::<f64>() / n;
    let std = (buffer.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(mean.abs() < 1e-10, "mean {mean:e}");
    assert!((std - 1.0).abs() < 1e-6, "std {std}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn checkpoint_file_round_trip_preserves_outputs(
        seed in any::<u64>(),
        history in 0usize..3,
        hidden in proptest::collection::vec(1usize..24, 1..4),
        log_std in -4.0f64..1.5,
        wide in any::<bool>(),
    ) {
        let width = 19 * (history + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.json");
        let obs = Array2::from_shape_fn((5, width), |_| rng.gen_range(-3.0..3.0));
        if wide {
            let model = ActorCritic::<f64>::new(width, &hidden, log_std, &mut rng);
            Checkpoint::from_model(&model, Variant::I, history, false, seed, 1, serde_json::Value::Null)
                .save(&path).unwrap();
            let back = Checkpoint::load(&path).unwrap().model::<f64>().unwrap();
            prop_assert_eq!(&back, &model);
            prop_assert_eq!(back.action_mean(obs.view()).unwrap(), model.action_mean(obs.view()).unwrap());
            prop_assert_eq!(back.value(obs.view()).unwrap(), model.value(obs.view()).unwrap());
        } else {
            let model = ActorCritic::<f32>::new(width, &hidden, log_std, &mut rng);
            Checkpoint::from_model(&model, Variant::It, history, true, seed, 1, serde_json::Value::Null)
                .save(&path).unwrap();
            let back = Checkpoint::load(&path).unwrap().model::<f32>().unwrap();
            let obs = obs.mapv(|x| x as f32);
            prop_assert_eq!(&back, &model);
            prop_assert_eq!(back.action_mean(obs.view()).unwrap(), model.action_mean(obs.view()).unwrap());
        }
    }
}
