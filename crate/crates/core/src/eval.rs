//! Evaluation protocol: deterministic rollouts of trained agents, position
//! RMSE and control-effort metrics, the three-agent comparison and the
//! history/trigger-duration sweep.
//!
//! Episode `k` of an evaluation with base seed `s` runs on random stream `k`
//! of `s`. Agents evaluated with the same base seed therefore see the same
//! initial states and the same disturbance events.

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::env::{QuadEnv, SimConfig};
use crate::error::{Error, Result};
use crate::nn::Scalar;
use crate::policy::ActorCritic;
use crate::ppo::PpoConfig;
use crate::trace::TraceRow;
use crate::train::{train, Variant};

/// How per-axis position error is reduced over an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MetricForm {
    /// `sqrt(mean(e^2))`
    #[default]
    Rmse,
    /// `sum_k sqrt(e_k^2 / M)`, i.e. `sum |e| / sqrt(M)`.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Initial-state randomization used during evaluation (replaces the
    /// training ranges).
    pub init_pos_range: f64,
    pub init_att_range: f64,
    pub init_vel_range: f64,
    pub metric: MetricForm,
    pub threads: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 8,
            init_pos_range: 0.0,
            init_att_range: 0.0,
            init_vel_range: 0.0,
            metric: MetricForm::Rmse,
            threads: 1,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::config("eval.episodes", "must be >= 1"));
        }
        if self.threads == 0 {
            return Err(Error::config("eval.threads", "must be >= 1"));
        }
        for (name, v) in [
            ("init_pos_range", self.init_pos_range),
            ("init_att_range", self.init_att_range),
            ("init_vel_range", self.init_vel_range),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("eval.{name}"), "must be >= 0"));
            }
        }
        Ok(())
    }

    /// Applies the evaluation initial-state ranges to a simulation config.
    pub fn apply(&self, sim: &SimConfig) -> SimConfig {
        let mut out = sim.clone();
        out.env.init_pos_range = self.init_pos_range;
        out.env.init_att_range = self.init_att_range;
        out.env.init_vel_range = self.init_vel_range;
        out
    }
}

/// Something that maps an observation to a normalized action.
pub trait Policy: Sync {
    fn input_width(&self) -> usize;
    fn act(&self, observation: &[f64]) -> Result<[f64; 3]>;
}

impl<F: Scalar> Policy for ActorCritic<F> {
    fn input_width(&self) -> usize {
        ActorCritic::input_width(self)
    }

    /// Deterministic (mean) action.
    fn act(&self, observation: &[f64]) -> Result<[f64; 3]> {
        let x = ndarray::Array2::from_shape_fn((1, observation.len()), |(_, j)| {
            F::of(observation[j])
        });
        let mean = self.action_mean(x.view())?;
        Ok([mean[[0, 0]].as_f64(), mean[[0, 1]].as_f64(), mean[[0, 2]].as_f64()])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub episode_id: usize,
    pub trigger_start: Option<f64>,
    pub impulse_time: Option<f64>,
    /// Left the error ball before the step budget ran out.
    pub failed: bool,
    pub rows: Vec<TraceRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub p_x: f64,
    pub p_y: f64,
    pub p_z: f64,
    pub p_norm: f64,
    pub sigma_u: f64,
    pub n_episodes: usize,
    pub failures: usize,
}

/// Per-axis error reduction for one episode.
pub fn episode_axis_error(rows: &[TraceRow], form: MetricForm) -> [f64; 3] {
    let m = rows.len() as f64;
    let mut out = [0.0; 3];
    if rows.is_empty() {
        return out;
    }
    for (j, o) in out.iter_mut().enumerate() {
        *o = match form {
            MetricForm::Rmse => (rows.iter().map(|r| r.error()[j].powi(2)).sum::<f64>() / m).sqrt(),
            MetricForm::Literal => rows.iter().map(|r| (r.error()[j].powi(2) / m).sqrt()).sum(),
        };
    }
    out
}

/// Sum of `‖u‖` over an episode.
pub fn control_effort(rows: &[TraceRow]) -> f64 {
    rows.iter()
        .map(|r| r.action().iter().map(|u| u * u).sum::<f64>().sqrt())
        .sum()
}

/// Averages per-episode metrics over episodes, in episode order.
pub fn episode_metrics(traces: &[EpisodeTrace], form: MetricForm) -> EpisodeMetrics {
    let n = traces.len().max(1) as f64;
    let mut axes = [0.0; 3];
    let mut effort = 0.0;
    for t in traces {
        let e = episode_axis_error(&t.rows, form);
        for j in 0..3 {
            axes[j] += e[j];
        }
        effort += control_effort(&t.rows);
    }
    let [p_x, p_y, p_z] = axes.map(|a| a / n);
    EpisodeMetrics {
        p_x,
        p_y,
        p_z,
        p_norm: (p_x * p_x + p_y * p_y + p_z * p_z).sqrt(),
        sigma_u: effort / n,
        n_episodes: traces.len(),
        failures: traces.iter().filter(|t| t.failed).count(),
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub metrics: EpisodeMetrics,
    pub traces: Vec<EpisodeTrace>,
}

/// Runs one episode with the policy's mean action on stream `episode` of
/// `seed`. `sim` is used as given.
pub fn run_episode(policy: &dyn Policy, sim: &SimConfig, seed: u64, episode: usize) -> Result<EpisodeTrace> {
    let mut env = QuadEnv::new(sim.clone(), seed, episode as u64)?;
    let mut obs = env.reset()?;
    let (trigger_start, impulse_time) = match env.event() {
        Some(e) => (Some(e.trigger_start), Some(e.impulse_time)),
        None => (None, None),
    };
    let mut rows = Vec::with_capacity(sim.env.episode_steps);
    let failed = loop {
        let action = policy.act(&obs)?;
        let result = env.step(&action)?;
        rows.push(TraceRow::record(&env, &result, episode));
        if result.terminated {
            break !result.info.timeout;
        }
        obs = result.observation;
    };
    Ok(EpisodeTrace {
        episode_id: episode,
        trigger_start,
        impulse_time,
        failed,
        rows,
    })
}

/// Evaluates `policy` for `eval.episodes` episodes. Episodes are spread over
/// `eval.threads` workers; the result does not depend on the worker count.
pub fn run_eval(policy: &dyn Policy, sim: &SimConfig, eval: &EvalConfig, seed: u64) -> Result<EvalReport> {
    eval.validate()?;
    let sim = eval.apply(sim);
    sim.validate()?;
    let expected = sim.env.observation_width();
    if policy.input_width() != expected {
        return Err(Error::ShapeMismatch {
            expected,
            found: policy.input_width(),
        });
    }
    let episodes: Vec<usize> = (0..eval.episodes).collect();
    let threads = eval.threads.min(eval.episodes).max(1);
    let traces: Vec<EpisodeTrace> = if threads == 1 {
        episodes
            .iter()
            .map(|&k| run_episode(policy, &sim, seed, k))
            .collect::<Result<_>>()?
    } else {
        let chunk = episodes.len().div_ceil(threads);
        let parts: Vec<Result<Vec<EpisodeTrace>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = episodes
                .chunks(chunk)
                .map(|ks| {
                    let sim = &sim;
                    scope.spawn(move || {
                        ks.iter()
                            .map(|&k| run_episode(policy, sim, seed, k))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("eval worker panicked"))
                .collect()
        });
        let mut all = Vec::with_capacity(eval.episodes);
        for p in parts {
            all.extend(p?);
        }
        all
    };
    Ok(EvalReport {
        metrics: episode_metrics(&traces, eval.metric),
        traces,
    })
}

/// Simulation config matching a checkpoint's observation layout.
pub fn sim_for_checkpoint(sim: &SimConfig, ckpt: &Checkpoint) -> SimConfig {
    let mut out = sim.clone();
    out.env.history = ckpt.architecture.history;
    out.env.enable_trigger_obs = ckpt.architecture.trigger_obs;
    out
}

/// Evaluates a checkpoint against `sim`, which must match its history length
/// and trigger flag.
pub fn run_eval_checkpoint(
    ckpt: &Checkpoint,
    sim: &SimConfig,
    eval: &EvalConfig,
    seed: u64,
) -> Result<EvalReport> {
    let expected = sim.env.observation_width();
    if ckpt.architecture.input_width != expected {
        return Err(Error::ShapeMismatch {
            expected,
            found: ckpt.architecture.input_width,
        });
    }
    if ckpt.architecture.trigger_obs != sim.env.enable_trigger_obs {
        return Err(Error::Checkpoint(format!(
            "checkpoint trigger_obs = {} but environment enable_trigger_obs = {}",
            ckpt.architecture.trigger_obs, sim.env.enable_trigger_obs
        )));
    }
    let model = ckpt.model::<f32>()?;
    run_eval(&model, sim, eval, seed)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub agent: String,
    #[serde(flatten)]
    pub metrics: EpisodeMetrics,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub traces: Vec<Vec<EpisodeTrace>>,
}

impl Comparison {
    pub fn row(&self, agent: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.agent == agent)
    }

    pub fn traces_for(&self, agent: &str) -> Option<&[EpisodeTrace]> {
        let i = self.rows.iter().position(|r| r.agent == agent)?;
        Some(&self.traces[i])
    }

    /// Fixed-width table with one row per agent.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<10} {:>8} {:>8} {:>8} {:>8} {:>10} {:>9}\n",
            "agent", "p_x", "p_y", "p_z", "|p|", "sigma_u", "failures"
        );
        for r in &self.rows {
            let m = &r.metrics;
            s.push_str(&format!(
                "{:<10} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>10.1} {:>9}\n",
                r.agent, m.p_x, m.p_y, m.p_z, m.p_norm, m.sigma_u, m.failures
            ));
        }
        s
    }
}

/// Evaluates several agents under one shared event schedule: the impulse is
/// always enabled and the trigger always generated; each agent observes it
/// only if its checkpoint was trained to.
pub fn compare_policies(
    agents: &[(&str, &Checkpoint)],
    sim: &SimConfig,
    eval: &EvalConfig,
    seed: u64,
) -> Result<Comparison> {
    let mut base = sim.clone();
    base.env.enable_disturbance = true;
    let mut rows = Vec::with_capacity(agents.len());
    let mut traces = Vec::with_capacity(agents.len());
    for (name, ckpt) in agents {
        let agent_sim = sim_for_checkpoint(&base, ckpt);
        let report = run_eval_checkpoint(ckpt, &agent_sim, eval, seed)?;
        rows.push(ComparisonRow {
            agent: name.to_string(),
            metrics: report.metrics,
        });
        traces.push(report.traces);
    }
    Ok(Comparison { rows, traces })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub history: usize,
    pub trigger_duration: f64,
    /// Training ended with episodes lasting at least half the step budget.
    pub stable: bool,
    pub p_norm: f64,
    pub sigma_u: f64,
    pub final_mean_episode_len: f64,
    pub error: Option<String>,
}

/// Trains an IT agent for every `(history, trigger_duration)` pair and
/// evaluates it. Failures are recorded per cell.
pub fn sweep_h_tt(
    h_values: &[usize],
    tt_values: &[f64],
    sim: &SimConfig,
    ppo: &PpoConfig,
    eval: &EvalConfig,
    seed: u64,
) -> Result<Vec<SweepCell>> {
    sweep_h_tt_with(h_values, tt_values, sim, ppo, eval, seed, |_| {})
}

pub fn sweep_h_tt_with(
    h_values: &[usize],
    tt_values: &[f64],
    sim: &SimConfig,
    ppo: &PpoConfig,
    eval: &EvalConfig,
    seed: u64,
    mut on_cell: impl FnMut(&SweepCell),
) -> Result<Vec<SweepCell>> {
    if h_values.is_empty() || tt_values.is_empty() {
        return Err(Error::config("sweep", "history and trigger-duration lists must be non-empty"));
    }
    let mut cells = Vec::with_capacity(h_values.len() * tt_values.len());
    for &h in h_values {
        for &tt in tt_values {
            let mut cell_sim = sim.clone();
            cell_sim.env.history = h;
            cell_sim.disturbance.trigger_duration = tt;
            let cell = match train_and_eval_cell(&cell_sim, ppo, eval, seed) {
                Ok((metrics, final_len)) => SweepCell {
                    history: h,
                    trigger_duration: tt,
                    stable: final_len >= 0.5 * cell_sim.env.episode_steps as f64,
                    p_norm: metrics.p_norm,
                    sigma_u: metrics.sigma_u,
                    final_mean_episode_len: final_len,
                    error: None,
                },
                Err(e) => SweepCell {
                    history: h,
                    trigger_duration: tt,
                    stable: false,
                    p_norm: f64::NAN,
                    sigma_u: f64::NAN,
                    final_mean_episode_len: 0.0,
                    error: Some(e.to_string()),
                },
            };
            on_cell(&cell);
            cells.push(cell);
        }
    }
    Ok(cells)
}

fn train_and_eval_cell(
    sim: &SimConfig,
    ppo: &PpoConfig,
    eval: &EvalConfig,
    seed: u64,
) -> Result<(EpisodeMetrics, f64)> {
    let outcome = train::<f32>(sim, ppo, Variant::It, seed)?;
    let report = run_eval(&outcome.model, &outcome.sim, eval, seed)?;
    Ok((report.metrics, outcome.final_mean_episode_len()))
}

/// Deviation of the commanded pitch rate ahead of the impulse, averaged over
/// episodes aligned on trigger onset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anticipation {
    /// Mean and standard deviation of the command over the baseline windows
    /// of all episodes, pooled.
    pub baseline_mean: f64,
    pub baseline_std: f64,
    /// Largest `|mean_k u_wy(onset + j) - baseline_mean|` over the steps `j`
    /// between trigger onset and the earliest impulse.
    pub max_deviation: f64,
    pub episodes: usize,
}

impl Anticipation {
    pub fn exceeds(&self, sigmas: f64) -> bool {
        self.max_deviation > sigmas * self.baseline_std
    }
}

/// Event-locked comparison of the pitch-rate command after trigger onset
/// (and before the impulse) with the `baseline` seconds before onset.
///
/// Averaging over aligned episodes cancels each episode's own slow settling,
/// which a single-episode comparison against a near-constant baseline would
/// mistake for a response. Row `k` holds the action chosen at `t_k - dt`.
/// Returns `None` when no trace has a full baseline window and an impulse.
pub fn anticipation(traces: &[EpisodeTrace], dt: f64, baseline: f64) -> Option<Anticipation> {
    let eps = 1e-9;
    let decided = |r: &TraceRow| r.t - dt;
    let mut base = Vec::new();
    let mut aligned: Vec<Vec<f64>> = Vec::new();
    for trace in traces {
        let (Some(start), Some(impulse)) = (trace.trigger_start, trace.impulse_time) else {
            continue;
        };
        let pre: Vec<f64> = trace
            .rows
            .iter()
            .filter(|r| decided(r) >= start - baseline - eps && decided(r) < start - eps)
            .map(|r| r.u_wy)
            .collect();
        let window: Vec<f64> = trace
            .rows
            .iter()
            .filter(|r| decided(r) >= start - eps && decided(r) < impulse - eps)
            .map(|r| r.u_wy)
            .collect();
        if pre.len() + 1 < (baseline / dt).round() as usize || window.is_empty() {
            continue;
        }
        base.extend(pre);
        aligned.push(window);
    }
    let lead = aligned.iter().map(Vec::len).min()?;
    if base.len() < 2 {
        return None;
    }
    let n = base.len() as f64;
    let mean = base.iter().sum::<f64>() / n;
    let std = (base.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let k = aligned.len() as f64;
    let max_deviation = (0..lead)
        .map(|j| (aligned.iter().map(|w| w[j]).sum::<f64>() / k - mean).abs())
        .fold(0.0, f64::max);
    Some(Anticipation {
        baseline_mean: mean,
        baseline_std: std,
        max_deviation,
        episodes: aligned.len(),
    })
}
