//! Command implementations behind the `impulse` binary.
//!
//! Every command resolves a [`RunConfig`] (file plus command-line overrides),
//! logs its digest and writes its outputs under a run directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use impulse_core::eval::{run_eval_checkpoint, sim_for_checkpoint, sweep_h_tt_with, SweepCell};
use impulse_core::trace::write_trace_csv;
use impulse_core::train::{train_with_progress, write_curve_csv};
use impulse_core::{compare_policies, load_config, Checkpoint, EpisodeMetrics, RunConfig, Variant};
use log::info;
use serde::Serialize;

/// Environment variable holding the log filter (e.g. `debug`).
pub const LOG_ENV: &str = "IMPULSE_LOG";

#[derive(Debug, Parser)]
#[command(name = "impulse", version, about = "Train and evaluate quadrotor agents against impulse disturbances")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one agent and write checkpoint.json, curve.csv and config.toml.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write a metrics document.
    Eval(EvalArgs),
    /// Evaluate nominal, I and IT checkpoints under one event schedule.
    Compare(CompareArgs),
    /// Train and evaluate IT agents over a history x trigger-duration grid.
    Sweep(SweepArgs),
    /// Write per-step evaluation trajectories of a run as CSV.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => load_config(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        config.validate()?;
        info!("config digest {}", config.digest());
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Variant,
    /// Run directory; defaults to `<out_dir>/<variant>-s<seed>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Checkpoint file or run directory containing checkpoint.json.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Metrics file; defaults to metrics.json next to the checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub nominal: PathBuf,
    #[arg(long)]
    pub i: PathBuf,
    #[arg(long)]
    pub it: PathBuf,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Comparison document; defaults to `<out_dir>/comparison.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// History lengths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0,10,50")]
    pub h: Vec<usize>,
    /// Trigger durations in seconds, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,1.0,2.0")]
    pub tt: Vec<f64>,
    /// Sweep table; defaults to `<out_dir>/sweep.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Trajectory CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Overrides the seed stored in the run's config.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: impulse_core::Error| e.to_string())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(&args).map(|_| ()),
        Command::Eval(args) => cmd_eval(&args).map(|_| ()),
        Command::Compare(args) => cmd_compare(&args).map(|_| ()),
        Command::Sweep(args) => cmd_sweep(&args).map(|_| ()),
        Command::Export(args) => cmd_export(&args).map(|_| ()),
    }
}

fn checkpoint_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("checkpoint.json")
    } else {
        path.to_path_buf()
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = checkpoint_path(path);
    Checkpoint::load(&file).with_context(|| format!("loading checkpoint {}", file.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Trains one agent; returns the run directory.
pub fn cmd_train(args: &TrainArgs) -> Result<PathBuf> {
    let config = args.config.resolve()?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| Path::new(&config.out_dir).join(format!("{}-s{}", args.variant, config.seed)));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    // the resolved config goes first so an interrupted run can be re-run
    fs::write(out.join("config.toml"), config.to_toml_string())?;

    info!(
        "training {} agent, seed {}, {} envs x {} epochs",
        args.variant, config.seed, config.ppo.num_envs, config.ppo.max_epochs
    );
    let outcome = train_with_progress::<f32>(&config.sim(), &config.ppo, args.variant, config.seed, |row| {
        if row.epoch % 10 == 0 {
            info!(
                "epoch {:>5} return {:>9.3} ep_len {:>7.1} kl {:.4} lr {:.2e}",
                row.epoch, row.mean_return, row.mean_episode_len, row.approx_kl, row.lr
            );
        }
    })?;
    let echo = serde_json::to_value(&config)?;
    Checkpoint::from_outcome(&outcome, echo).save(out.join("checkpoint.json"))?;
    write_curve_csv(&outcome.curve, fs::File::create(out.join("curve.csv"))?)?;
    info!("wrote {}", out.display());
    Ok(out)
}

/// Metrics document written by `eval`.
#[derive(Debug, Serialize)]
pub struct MetricsDoc {
    pub agent: String,
    #[serde(flatten)]
    pub metrics: EpisodeMetrics,
    pub seed: u64,
    pub config: serde_json::Value,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<MetricsDoc> {
    let mut config = args.config.resolve()?;
    if let Some(n) = args.episodes {
        config.eval.episodes = n;
    }
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let sim = sim_for_checkpoint(&config.sim(), &ckpt);
    let report = run_eval_checkpoint(&ckpt, &sim, &config.eval, config.seed)?;
    let doc = MetricsDoc {
        agent: ckpt.variant.to_string(),
        metrics: report.metrics,
        seed: config.seed,
        config: serde_json::to_value(&config)?,
    };
    let out = args.out.clone().unwrap_or_else(|| {
        checkpoint_path(&args.checkpoint)
            .parent()
            .map_or_else(|| PathBuf::from("metrics.json"), |p| p.join("metrics.json"))
    });
    write_json(&out, &doc)?;
    println!(
        "{}: |p| = {:.4} m (p_x {:.4}, p_y {:.4}, p_z {:.4}), sigma_u = {:.1}, failures {}/{}",
        doc.agent,
        doc.metrics.p_norm,
        doc.metrics.p_x,
        doc.metrics.p_y,
        doc.metrics.p_z,
        doc.metrics.sigma_u,
        doc.metrics.failures,
        doc.metrics.n_episodes
    );
    Ok(doc)
}

#[derive(Debug, Serialize)]
pub struct ComparisonDoc {
    pub rows: Vec<impulse_core::eval::ComparisonRow>,
    pub seed: u64,
    pub config: serde_json::Value,
}

pub fn cmd_compare(args: &CompareArgs) -> Result<ComparisonDoc> {
    let mut config = args.config.resolve()?;
    if let Some(n) = args.episodes {
        config.eval.episodes = n;
    }
    let nominal = load_checkpoint(&args.nominal)?;
    let i = load_checkpoint(&args.i)?;
    let it = load_checkpoint(&args.it)?;
    let agents = [("Nominal", &nominal), ("I", &i), ("IT", &it)];
    let comparison = compare_policies(&agents, &config.sim(), &config.eval, config.seed)?;
    print!("{}", comparison.to_table());
    let doc = ComparisonDoc {
        rows: comparison.rows,
        seed: config.seed,
        config: serde_json::to_value(&config)?,
    };
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| Path::new(&config.out_dir).join("comparison.json"));
    write_json(&out, &doc)?;
    Ok(doc)
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<Vec<SweepCell>> {
    let config = args.config.resolve()?;
    if let Some(tt) = args.tt.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        bail!("trigger durations must be positive, got {tt}");
    }
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| Path::new(&config.out_dir).join("sweep.csv"));
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    let cells = sweep_h_tt_with(
        &args.h,
        &args.tt,
        &config.sim(),
        &config.ppo,
        &config.eval,
        config.seed,
        |cell| {
            info!(
                "H = {:>3}, T_t = {:.2}: stable {}, |p| {:.4}, sigma_u {:.1}{}",
                cell.history,
                cell.trigger_duration,
                cell.stable,
                cell.p_norm,
                cell.sigma_u,
                cell.error.as_deref().map(|e| format!(" ({e})")).unwrap_or_default()
            );
        },
    )?;
    let mut w = csv::Writer::from_path(&out).with_context(|| format!("writing {}", out.display()))?;
    for cell in &cells {
        w.serialize(cell)?;
    }
    w.flush()?;
    Ok(cells)
}

/// Re-runs the deterministic evaluation of a trained run (impulse enabled)
/// and writes every step as a CSV row.
pub fn cmd_export(args: &ExportArgs) -> Result<usize> {
    let config_path = args.run.join("config.toml");
    let mut config =
        load_config(&config_path).with_context(|| format!("loading {}", config_path.display()))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(n) = args.episodes {
        config.eval.episodes = n;
    }
    info!("config digest {}", config.digest());
    let ckpt = load_checkpoint(&args.run)?;
    let mut sim = sim_for_checkpoint(&config.sim(), &ckpt);
    sim.env.enable_disturbance = true;
    let report = run_eval_checkpoint(&ckpt, &sim, &config.eval, config.seed)?;
    if let Some(parent) = args.out.parent() {
        fs::create_dir_all(parent)?;
    }
    let rows = report.traces.iter().flat_map(|t| t.rows.iter());
    write_trace_csv(rows, fs::File::create(&args.out)?)?;
    let n = report.traces.iter().map(|t| t.rows.len()).sum();
    info!("wrote {n} rows to {}", args.out.display());
    Ok(n)
}
