//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use impulse_core::gae::gae_advantages;
use impulse_core::nn::Scalar;
use impulse_core::policy::{gaussian_log_prob, sample_action};
use impulse_core::ppo::{loss_and_grad, Batch, LossWeights};
use impulse_core::ActorCritic;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Denominator floor for relative gradient errors. Parameters whose true
/// gradient is below this are compared in absolute terms.
pub const GRAD_REL_FLOOR: f64 = 1e-6;

/// Random 19 -> 8 -> 8 -> 3 actor-critic with every parameter (including the
/// output layers) drawn from U(-0.6, 0.6).
pub fn random_small_model(rng: &mut ChaCha8Rng) -> ActorCritic<f64> {
    let mut model = ActorCritic::<f64>::new(19, &[8, 8], -0.5, rng);
    for t in model.tensors_mut() {
        for x in t.iter_mut() {
            *x = rng.gen_range(-0.6..0.6);
        }
    }
    for l in model.log_std.iter_mut() {
        *l = rng.gen_range(-1.2..0.2);
    }
    model.with_value_scale(rng.gen_range(0.5..50.0))
}

/// Owned minibatch inputs.
pub struct OwnedBatch {
    pub observations: Array2<f64>,
    pub actions: Array2<f64>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl OwnedBatch {
    pub fn view(&self) -> Batch<'_, f64> {
        Batch {
            observations: self.observations.view(),
            actions: self.actions.view(),
            old_log_probs: &self.old_log_probs,
            advantages: &self.advantages,
            returns: &self.returns,
        }
    }
}

/// Batch whose probability ratios are spread over [0.6, 1.5] but kept at
/// least 0.02 away from the clip kinks at `1 +- clip`.
pub fn random_batch(model: &ActorCritic<f64>, rows: usize, clip: f64, rng: &mut ChaCha8Rng) -> OwnedBatch {
    let observations = Array2::from_shape_fn((rows, 19), |_| rng.gen_range(-1.5..1.5));
    let means = model.action_mean(observations.view()).unwrap();
    let log_std = model.log_std.to_vec();
    let mut actions = Array2::zeros((rows, 3));
    let mut old_log_probs = Vec::with_capacity(rows);
    for i in 0..rows {
        let s = sample_action(&means.row(i).to_vec(), &log_std, rng);
        actions.row_mut(i).assign(&ndarray::arr1(&s.raw));
        let ratio = loop {
            let r: f64 = rng.gen_range(0.6..1.5);
            if (r - (1.0 - clip)).abs() > 0.02 && (r - (1.0 + clip)).abs() > 0.02 {
                break r;
            }
        };
        old_log_probs.push(s.log_prob - ratio.ln());
    }
    OwnedBatch {
        observations,
        actions,
        old_log_probs,
        advantages: (0..rows).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        returns: (0..rows).map(|_| rng.gen_range(-3.0..3.0) * model.value_scale).collect(),
    }
}

/// PPO loss written directly from its definition, using only forward passes:
/// `-mean(min(r A, clip(r, 1 +- eps) A)) + c_v * 0.5 * mean(((V - R) / s)^2) - c_e * H`
/// with `s` the value scale.
pub fn reference_ppo_loss(model: &ActorCritic<f64>, batch: &OwnedBatch, weights: &LossWeights) -> f64 {
    reference_policy_terms(model, batch, weights) + reference_value_term(model, batch, weights)
}

/// Clipped-surrogate and entropy part of [`reference_ppo_loss`]; depends on
/// the actor and `log_std` only.
pub fn reference_policy_terms(model: &ActorCritic<f64>, batch: &OwnedBatch, weights: &LossWeights) -> f64 {
    let means = model.action_mean(batch.observations.view()).unwrap();
    let b = batch.old_log_probs.len() as f64;
    let mut surrogate = 0.0;
    for i in 0..batch.old_log_probs.len() {
        let mut log_p = 0.0;
        for j in 0..3 {
            let std = model.log_std[j].exp();
            let z = (batch.actions[[i, j]] - means[[i, j]]) / std;
            log_p += -0.5 * z * z - std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        }
        let r = (log_p - batch.old_log_probs[i]).exp();
        let a = batch.advantages[i];
        surrogate += (r * a).min(r.clamp(1.0 - weights.clip, 1.0 + weights.clip) * a);
    }
    let entropy: f64 = model
        .log_std
        .iter()
        .map(|l| 0.5 + 0.5 * (2.0 * std::f64::consts::PI).ln() + l)
        .sum();
    -surrogate / b - weights.entropy_coef * entropy
}

/// Value-regression part of [`reference_ppo_loss`]; depends on the critic only.
pub fn reference_value_term(model: &ActorCritic<f64>, batch: &OwnedBatch, weights: &LossWeights) -> f64 {
    let values = model.value(batch.observations.view()).unwrap();
    let b = batch.returns.len() as f64;
    let value: f64 = (0..batch.returns.len())
        .map(|i| ((values[i] - batch.returns[i]) / model.value_scale).powi(2))
        .sum();
    weights.value_coef * 0.5 * value / b
}

/// Largest relative error between the analytic gradient of the full PPO loss
/// and central finite differences of [`reference_ppo_loss`], over `draws`
/// random models and batches. Relative errors use
/// `max(|analytic|, |numeric|, GRAD_REL_FLOOR)` as the denominator.
pub fn ppo_gradient_check(draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = LossWeights {
        clip: 0.2,
        value_coef: 0.7,
        entropy_coef: 0.01,
    };
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let model = random_small_model(&mut rng);
        let batch = random_batch(&model, 6, weights.clip, &mut rng);
        let (stats, grads) = loss_and_grad(&model, &batch.view(), &weights).unwrap();
        let reference = reference_ppo_loss(&model, &batch, &weights);
        assert!(
            (stats.total - reference).abs() <= 1e-12 * reference.abs().max(1.0),
            "loss {} vs reference {reference}",
            stats.total
        );
        let analytic: Vec<f64> = grads.tensors().concat();
        let sizes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
        // actor tensors, then log_std, then critic tensors
        let critic_from = model.actor.tensors().len() + 1;
        let mut probe = model.clone();
        let mut k = 0;
        for (t, &len) in sizes.iter().enumerate() {
            // a parameter moves only the part of the loss that depends on it
            let part = if t < critic_from { reference_policy_terms } else { reference_value_term };
            for i in 0..len {
                let original = probe.tensors()[t][i];
                let mut at = |offset: f64| {
                    probe.tensors_mut()[t][i] = original + offset;
                    part(&probe, &batch, &weights)
                };
                // fourth-order central stencil
                let numeric = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
                probe.tensors_mut()[t][i] = original;
                let a = analytic[k];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_REL_FLOOR);
                worst = worst.max(rel);
                k += 1;
            }
        }
    }
    worst
}

/// Brute-force discounted return of each step up to its episode end, with a
/// bootstrap from `last_value` if the rollout ends mid-episode.
pub fn brute_force_lambda_one(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
) -> Vec<f64> {
    let n = rewards.len();
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            let mut discount = 1.0;
            let mut k = t;
            loop {
                sum += discount * rewards[k];
                discount *= gamma;
                if dones[k] {
                    break;
                }
                k += 1;
                if k == n {
                    sum += discount * last_value;
                    break;
                }
            }
            sum - values[t]
        })
        .collect()
}

/// Largest |GAE(lambda = 1) - brute force| over `sequences` random rollouts
/// of 1..=3 interleaved environments.
pub fn gae_oracle_max_error(sequences: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..sequences {
        let envs = rng.gen_range(1..=3);
        let steps = rng.gen_range(1..=64);
        let gamma = rng.gen_range(0.8..1.0);
        let per_env: Vec<(Vec<f64>, Vec<f64>, Vec<bool>, f64)> = (0..envs)
            .map(|_| {
                let r: Vec<f64> = (0..steps).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let v: Vec<f64> = (0..steps).map(|_| rng.gen_range(-5.0..5.0)).collect();
                let d: Vec<bool> = (0..steps).map(|_| rng.gen_bool(0.1)).collect();
                (r, v, d, rng.gen_range(-5.0..5.0))
            })
            .collect();
        // step-major interleaving, as stored by the rollout buffer
        let mut rewards = Vec::new();
        let mut values = Vec::new();
        let mut dones = Vec::new();
        for t in 0..steps {
            for e in &per_env {
                rewards.push(e.0[t]);
                values.push(e.1[t]);
                dones.push(e.2[t]);
            }
        }
        let last: Vec<f64> = per_env.iter().map(|e| e.3).collect();
        let (adv, ret) = gae_advantages(&rewards, &values, &dones, &last, gamma, 1.0);
        for (e, (r, v, d, lv)) in per_env.iter().enumerate() {
            let oracle = brute_force_lambda_one(r, v, d, *lv, gamma);
            for t in 0..steps {
                let i = t * envs + e;
                worst = worst.max((adv[i] - oracle[t]).abs());
                worst = worst.max((ret[i] - (oracle[t] + v[t])).abs());
            }
        }
    }
    worst
}

/// Samples actions from `model` on random observations and returns the
/// largest |ratio - 1| the loss sees when evaluated with the same parameters.
pub fn first_pass_ratio_deviation<F: Scalar>(model: &ActorCritic<F>, rows: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = model.input_width();
    let obs = Array2::from_shape_fn((rows, width), |_| F::of(rng.gen_range(-1.0..1.0)));
    let means = model.action_mean(obs.view()).unwrap();
    let log_std = model.log_std.to_vec();
    let mut actions = Array2::zeros((rows, 3));
    let mut old = Vec::with_capacity(rows);
    for i in 0..rows {
        let s = sample_action(&means.row(i).to_vec(), &log_std, &mut rng);
        // the stored log-probability must be the density of the raw draw
        debug_assert_eq!(s.log_prob, gaussian_log_prob(&s.raw, &means.row(i).to_vec(), &log_std));
        actions.row_mut(i).assign(&ndarray::arr1(&s.raw));
        old.push(s.log_prob);
    }
    let adv: Vec<F> = (0..rows).map(|_| F::of(rng.gen_range(-1.0..1.0))).collect();
    let ret = adv.clone();
    let batch = Batch {
        observations: obs.view(),
        actions: actions.view(),
        old_log_probs: &old,
        advantages: &adv,
        returns: &ret,
    };
    let weights = LossWeights {
        clip: 0.2,
        value_coef: 1.0,
        entropy_coef: 0.0,
    };
    loss_and_grad(model, &batch, &weights).unwrap().0.max_ratio_deviation
}

/// Every worked example of the environment and disturbance modules, each
/// evaluated exactly as stated. Returns `(description, passed)` pairs.
pub fn environment_and_disturbance_examples() -> Vec<(&'static str, bool)> {
    use impulse_core::disturbance::{disturbance_force, sample_event, trigger_value, DisturbanceEvent, DisturbanceParams};
    use impulse_core::env::{build_observation, compute_reward, observation_width, EnvConfig, FrameHistory, FRAME_WIDTH};
    use impulse_core::rigid_body::RigidBodyState;
    use impulse_core::{QuadEnv, SimConfig};
    use nalgebra::Vector3;

    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    // disturbance: sample_event / trigger_value / disturbance_force
    let e = DisturbanceEvent::new(2.0, 0.5, 0.02, -1000.0, 0.01, 0.0);
    out.push(("T_t = 0.5, delta = 0.02, start 2.0 -> impulse at 2.48 s", (e.impulse_time - 2.48).abs() < 1e-12));
    let e0 = DisturbanceEvent::new(2.0, 0.5, 0.0, -1000.0, 0.01, 0.0);
    out.push(("delta = 0 -> impulse exactly at trigger end", e0.impulse_time == e0.trigger_end()));
    let params = DisturbanceParams::default();
    let forces: Vec<f64> = (0..10_000)
        .map(|_| sample_event(&params, 10.0, 0.01, &mut rng).unwrap().peak_force.x)
        .collect();
    let mean = forces.iter().sum::<f64>() / forces.len() as f64;
    out.push(("10^4 samples: peak force mean -1000 +- 5 N", (mean + 1000.0).abs() <= 5.0));
    out.push((
        "10^4 samples: peak force within [-1050, -950] N",
        forces.iter().all(|f| (-1050.0..=-950.0).contains(f)),
    ));
    out.push(("trigger before onset -> 0", trigger_value(&e, 1.99) == 0.0));
    out.push(("trigger at onset -> 1", trigger_value(&e, 2.0) == 1.0));
    out.push(("trigger at onset + T_t -> 0 (half-open)", trigger_value(&e, 2.5) == 0.0));
    out.push((
        "force outside impulse window -> 0",
        disturbance_force(&e, 2.0, &mut rng) == Vector3::zeros()
            && disturbance_force(&e, 2.49, &mut rng) == Vector3::zeros(),
    ));
    out.push((
        "noise_std = 0, inside window, peak -1000 -> (-1000, 0, 0) N",
        disturbance_force(&e, 2.48, &mut rng) == Vector3::new(-1000.0, 0.0, 0.0),
    ));
    let dv = -1000.0 * 0.01 / 3.1;
    out.push(("impulse 0.01 s x -1000 N on 3.1 kg -> dv_x = -3.2258 m/s", (dv - -3.2258f64).abs() < 5e-5));

    // environment: reset
    let mut quiet = SimConfig::default();
    quiet.env.init_pos_range = 0.0;
    quiet.env.init_att_range = 0.0;
    quiet.env.init_vel_range = 0.0;
    quiet.env.enable_disturbance = false;
    let mut env = QuadEnv::new(quiet.clone(), 1, 0).unwrap();
    let obs = env.reset().unwrap();
    let s = *env.state();
    out.push((
        "zero randomization -> p = p_r, R = I, v = 0, e_p = 0",
        s.position == quiet.env.reference()
            && s.rotation == nalgebra::Matrix3::identity()
            && s.velocity == Vector3::zeros()
            && obs[0..3] == [0.0; 3],
    ));
    let a = QuadEnv::new(SimConfig::default(), 77, 3).unwrap().reset().unwrap();
    let b = QuadEnv::new(SimConfig::default(), 77, 3).unwrap().reset().unwrap();
    out.push(("same seed twice -> identical reset observations", a == b));
    let mut cfg = SimConfig::default();
    cfg.env.enable_disturbance = false;
    let mut env = QuadEnv::new(cfg, 3, 0).unwrap();
    let mut xs = Vec::with_capacity(10_000);
    for _ in 0..10_000 {
        env.reset().unwrap();
        xs.push(env.position_error().x);
    }
    let mean_x = xs.iter().sum::<f64>() / xs.len() as f64;
    out.push(("10^4 resets: mean p_x within 0.05 of 0", mean_x.abs() < 0.05));
    out.push(("10^4 resets: max |p_x| <= 1", xs.iter().all(|x| x.abs() <= 1.0)));

    // environment: step
    let mut env = QuadEnv::new(quiet.clone(), 1, 0).unwrap();
    env.reset().unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let r = env.step(&[0.0; 3]).unwrap();
        worst = worst.max(r.info.position_error.norm());
    }
    out.push(("hover, u = 0, no disturbance -> |e_p| < 1e-6 over 100 steps", worst < 1e-6));
    let mut env = QuadEnv::new(quiet.clone(), 1, 0).unwrap();
    env.reset().unwrap();
    env.set_state(RigidBodyState::at_rest(quiet.env.reference() + Vector3::new(3.5, 0.0, 0.0)));
    let r = env.step(&[0.0; 3]).unwrap();
    out.push(("|e_p| >= e_m after step -> reward -c, terminated", r.reward == -10.0 && r.terminated));
    let mut env = QuadEnv::new(quiet.clone(), 1, 0).unwrap();
    env.reset().unwrap();
    env.set_event(Some(DisturbanceEvent::new(0.0, 0.5, 0.0, -1000.0, 0.01, 0.0)));
    for _ in 0..50 {
        env.step(&[0.0; 3]).unwrap();
    }
    let before = env.state().velocity.x;
    let r = env.step(&[0.0; 3]).unwrap();
    let drop = env.state().velocity.x - before;
    out.push((
        "step crossing the impulse (-1000 N, 0.01 s) -> v_x drops by about 3.23 m/s",
        r.info.disturbance.x == -1000.0 && (drop + 3.2258).abs() < 0.01,
    ));

    // environment: reward
    let ec = EnvConfig::default();
    out.push(("e_p = 0, u = 0 -> r = 1", compute_reward(&Vector3::zeros(), &[0.0; 3], &ec) == 1.0));
    out.push((
        "alpha = 0.5, e_p = (1, 0, 0), u = 0 -> r = 0.25",
        compute_reward(&Vector3::new(1.0, 0.0, 0.0), &[0.0; 3], &ec) == 0.25,
    ));
    out.push((
        "e_p = 0, u = (1, 1, 1), k_u = 0.01 -> r = 0.97",
        (compute_reward(&Vector3::zeros(), &[1.0; 3], &ec) - 0.97).abs() < 1e-15,
    ));

    // environment: observation
    out.push(("H = 0 -> width 19", observation_width(0) == 19));
    out.push(("H = 10 -> width 209", observation_width(10) == 209));
    let mut h = FrameHistory::new(50);
    let frame: [f64; FRAME_WIDTH] = std::array::from_fn(|i| i as f64 * 0.5 - 3.0);
    h.fill(frame);
    let obs = build_observation(&mut h, frame);
    out.push((
        "right after reset with H = 50 -> all 51 frames identical",
        obs.len() == 51 * FRAME_WIDTH && obs.chunks(FRAME_WIDTH).all(|c| c == frame),
    ));
    let mut cfg = SimConfig::default();
    cfg.env.history = 50;
    let mut env = QuadEnv::new(cfg, 4, 0).unwrap();
    let obs = env.reset().unwrap();
    let first = &obs[..FRAME_WIDTH];
    out.push((
        "environment reset with H = 50 -> 51 identical frames",
        obs.len() == 969 && obs.chunks(FRAME_WIDTH).all(|c| c == first),
    ));
    out
}

/// |z(1 s) - (-g/2)| for a body dropped from rest with zero thrust.
pub fn free_fall_error() -> f64 {
    use impulse_core::rigid_body::{integrate_step, InertialParams, RigidBodyState};
    use nalgebra::Vector3;
    let p = InertialParams::default();
    let mut s = RigidBodyState::default();
    for _ in 0..100 {
        s = integrate_step(&s, 0.0, &Vector3::zeros(), &Vector3::zeros(), &p, 0.01).unwrap();
    }
    (s.position.z - (-4.905)).abs()
}

/// Largest per-step position change while holding hover thrust.
pub fn hover_drift_per_step(steps: usize) -> f64 {
    use impulse_core::rigid_body::{integrate_step, InertialParams, RigidBodyState};
    use nalgebra::Vector3;
    let p = InertialParams::default();
    let mut s = RigidBodyState::at_rest(Vector3::new(0.3, -0.2, 1.0));
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let next = integrate_step(&s, p.hover_thrust(), &Vector3::zeros(), &Vector3::zeros(), &p, 0.01).unwrap();
        worst = worst.max((next.position - s.position).norm());
        s = next;
    }
    worst
}

/// Largest |omega_i - 551.46| of the four hover rotor speeds, and whether
/// the mixer reported saturation.
pub fn hover_rotor_speed_error() -> (f64, bool) {
    use impulse_core::actuation::{Mixer, RotorParams, Wrench};
    use impulse_core::rigid_body::InertialParams;
    use nalgebra::Vector3;
    let mixer = Mixer::new(RotorParams::default()).unwrap();
    let cmd = mixer.wrench_to_rotor_speeds(&Wrench::new(InertialParams::default().hover_thrust(), Vector3::zeros()));
    let worst = cmd.omegas.iter().map(|o| (o - 551.46).abs()).fold(0.0, f64::max);
    (worst, cmd.saturated)
}

/// Worst wrench -> rotor speeds -> wrench error over `draws` feasible
/// wrenches, relative to `1 + |wrench|_inf`.
pub fn allocation_round_trip_error(draws: usize, seed: u64) -> f64 {
    use impulse_core::actuation::{Mixer, RotorParams};
    let params = RotorParams::default();
    let mixer = Mixer::new(params).unwrap();
    let max = params.max_rotor_thrust();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        // a wrench built from in-range rotor thrusts is feasible by construction
        let thrusts: [f64; 4] = std::array::from_fn(|_| rng.gen_range(0.0..max));
        let omegas = thrusts.map(|t| (t / params.c_f).sqrt());
        let w = mixer.rotor_speeds_to_wrench(&omegas).unwrap();
        let cmd = mixer.wrench_to_rotor_speeds(&w);
        let back = mixer.rotor_speeds_to_wrench(&cmd.omegas).unwrap();
        let err = (back.thrust - w.thrust).abs().max((back.torque - w.torque).abs().max());
        worst = worst.max(err / (1.0 + w.thrust.abs().max(w.torque.abs().max())));
    }
    worst
}

/// Samples `events` disturbance events spread over the standard trigger
/// durations and counts those whose force appears before the trigger or
/// whose trigger is not on for exactly its duration.
pub fn trigger_ordering_violations(events: usize, seed: u64) -> usize {
    use impulse_core::disturbance::{disturbance_force, sample_event, trigger_value, DisturbanceParams};
    use nalgebra::Vector3;
    let dt = 0.01;
    let durations = [0.1, 0.5, 1.0, 2.0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    for k in 0..events {
        let tt = durations[k % durations.len()];
        let params = DisturbanceParams {
            trigger_duration: tt,
            ..Default::default()
        };
        let event = sample_event(&params, 10.0, dt, &mut rng).unwrap();
        let (mut first_trigger, mut first_force, mut active) = (None, None, 0usize);
        for step in 0..1000 {
            let t = step as f64 * dt;
            if trigger_value(&event, t) == 1.0 {
                first_trigger.get_or_insert(step);
                active += 1;
            }
            if disturbance_force(&event, t, &mut rng) != Vector3::zeros() {
                first_force.get_or_insert(step);
            }
        }
        let ordered = matches!((first_trigger, first_force), (Some(t), Some(f)) if f >= t);
        if !ordered || (active as f64 * dt - tt).abs() > 1e-9 {
            violations += 1;
        }
    }
    violations
}

