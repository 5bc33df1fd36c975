use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use serde::Serialize;

use nexus_core::sim::{experiment_arms, experiment_preset, run_arms, run_scenario, ArmRun, Experiment, ScenarioConfig};
use nexus_core::NexusError;

#[derive(Debug, Parser)]
#[command(
    name = "nexus-sim",
    version,
    about = "Deterministic simulator for reputation-driven decentralized federated learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario from a TOML config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed; the NEXUS_SIM_SEED environment variable overrides both.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment preset: every sweep arm over seeds 0..K.
    Exp {
        /// Experiment id, exp1 through exp10.
        id: String,
        /// Node-count multiplier over the 100-node desk scale.
        #[arg(long, default_value_t = 1)]
        scale: usize,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Overrides the preset's round count.
        #[arg(long)]
        rounds: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a config file and report the first invalid field.
    ValidateConfig { file: PathBuf },
    /// Print an experiment's base configuration as TOML.
    ShowPreset {
        id: String,
        #[arg(long, default_value_t = 1)]
        scale: usize,
    },
}

/// One line of an experiment's `summary.csv`.
#[derive(Debug, Serialize)]
struct ArmSummary<'a> {
    arm: &'a str,
    seed: u64,
    rounds: usize,
    success_rate: Option<f64>,
    validation_correctness: Option<f64>,
    final_val_acc: Option<f64>,
    final_test_acc: Option<f64>,
    final_epsilon: Option<f64>,
    mean_consensus_latency_s: Option<f64>,
    p95_round_time_s: Option<f64>,
    mean_lookup_hops: Option<f64>,
}

impl<'a> From<&'a ArmRun> for ArmSummary<'a> {
    fn from(r: &'a ArmRun) -> Self {
        let m = &r.metrics;
        Self {
            arm: &r.label,
            seed: r.seed,
            rounds: m.rounds.len(),
            success_rate: m.success_rate(),
            validation_correctness: m.validation_correctness(),
            final_val_acc: m.final_val_acc(),
            final_test_acc: m.final_test_acc(),
            final_epsilon: m.final_epsilon(),
            mean_consensus_latency_s: m.mean_consensus_latency_s(),
            p95_round_time_s: m.p95_round_time_s(),
            mean_lookup_hops: m.mean_lookup_hops(),
        }
    }
}

fn cmd_run(config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = ScenarioConfig::from_file(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.apply_seed_env()?;
    let metrics = run_scenario(&cfg)?;
    metrics.write_dir(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml_string()?)?;
    print!("{}", metrics.summary());
    Ok(())
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.3}"))
}

fn cmd_exp(id: &str, scale: usize, seeds: u64, rounds: Option<u64>, out: &Path) -> Result<()> {
    let exp: Experiment = id.parse()?;
    eprintln!("{exp}: {} (scale {scale}, {seeds} seed(s))", exp.title());
    let mut arms = experiment_arms(exp, scale)?;
    if let Some(n) = rounds {
        for arm in &mut arms {
            arm.config.rounds = n;
        }
    }
    let runs = run_arms(&arms, seeds)?;
    std::fs::create_dir_all(out)?;
    let mut summary = csv::Writer::from_path(out.join("summary.csv"))?;
    println!(
        "{:<36} {:>4} {:>8} {:>8} {:>8} {:>8}",
        "arm", "seed", "success", "correct", "test_acc", "p95_s"
    );
    for r in &runs {
        let dir = out.join(&r.label).join(format!("seed-{}", r.seed));
        r.metrics.write_dir(&dir)?;
        let s = ArmSummary::from(r);
        println!(
            "{:<36} {:>4} {:>8} {:>8} {:>8} {:>8}",
            s.arm,
            s.seed,
            fmt(s.success_rate),
            fmt(s.validation_correctness),
            fmt(s.final_test_acc),
            fmt(s.p95_round_time_s)
        );
        summary.serialize(s)?;
    }
    summary.flush()?;
    Ok(())
}

fn cmd_validate(file: &Path) -> Result<()> {
    let cfg = ScenarioConfig::from_file(file)?;
    println!(
        "ok: {} ({} nodes, {} rounds, seed {})",
        cfg.name,
        cfg.total_nodes(),
        cfg.rounds,
        cfg.seed
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, seed, out } => cmd_run(config, *seed, out),
        Command::Exp {
            id,
            scale,
            seeds,
            rounds,
            out,
        } => cmd_exp(id, *scale, *seeds, *rounds, out),
        Command::ValidateConfig { file } => cmd_validate(file),
        Command::ShowPreset { id, scale } => id
            .parse::<Experiment>()
            .and_then(|e| experiment_preset(e, *scale))
            .and_then(|c| c.to_toml_string())
            .map(|t| print!("{t}"))
            .map_err(Into::into),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let config_error = matches!(err.downcast_ref::<NexusError>(), Some(NexusError::Config { .. }));
            ExitCode::from(if config_error { 2 } else { 1 })
        }
    }
}
