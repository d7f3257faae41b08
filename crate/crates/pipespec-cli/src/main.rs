//! Command-line front end: analytic reports, simulation runs, parameter
//! sweeps, and event-log replay.
//!
//! Exit codes: 0 on success, 2 on usage or configuration errors, 3 on an
//! internal engine fault.

mod config;
mod output;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use pipespec::analytic::{AnalyticInputs, AnalyticReport};
use pipespec::engine::{replay, run, EngineError, EventLog, RunResult};
use pipespec::metrics::{summarize, sweep, EnergyWeights, MetricsReport, SweepAxis};
use pipespec::oracle::oracle_models;
use pipespec::trace::Trace;
use pipespec::types::{Mode, PipelineConfig, TokenId};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use config::{ExperimentConfig, RunMode};
use output::{fmt, RunBlock, RunSummary};

#[derive(Parser)]
#[command(
    name = "pipespec",
    about = "Hierarchical pipelined speculative decoding: simulator and analytic model",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the closed-form throughput model at one point or on a grid
    Analytic(AnalyticArgs),
    /// Run the configured pipeline and write results and metrics
    Simulate(SimulateArgs),
    /// Run autoregressive, lockstep, and async modes under one seed
    /// (simulate with mode = all)
    Compare(SimulateArgs),
    /// Sweep one axis (lookahead, alpha, gamma, depth) across values
    Sweep(SweepArgs),
    /// Reconstruct a run from an emitted event log
    Replay(ReplayArgs),
}

#[derive(Args)]
struct AnalyticArgs {
    /// Acceptance rate between the draft and target stage, in [0, 1]
    #[arg(long)]
    alpha: f64,
    /// Verify window (draft tokens per verification batch)
    #[arg(long)]
    gamma: u32,
    /// Draft-to-target token-rate ratio
    #[arg(long, default_value_t = 1.0)]
    speed_ratio: f64,
    /// Emit a CSV over the alpha x gamma grid instead of a single report
    #[arg(long)]
    grid: bool,
    /// Write output here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment configuration file (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing)
    #[arg(long, default_value = "pipespec_out")]
    out: PathBuf,
    /// Additionally write the full event log per mode, for replay
    #[arg(long)]
    emit_events: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment configuration file (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Sweep axis: lookahead, alpha, gamma, or depth (defaults to the
    /// config's [sweep] section)
    #[arg(long)]
    axis: Option<String>,
    /// Comma-separated axis values (defaults to the config's [sweep] values)
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    /// Override the config's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing)
    #[arg(long, default_value = "pipespec_out")]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    /// Event log to replay (written by simulate --emit-events)
    events: PathBuf,
    /// Write the reconstructed run here as JSON
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Analytic(args) => cmd_analytic(args),
        Command::Simulate(args) => cmd_simulate(args, None),
        Command::Compare(args) => cmd_simulate(args, Some(RunMode::All)),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Replay(args) => cmd_replay(args),
    };
    if let Err(err) = outcome {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code_for(&err));
    }
}

/// Usage and configuration errors exit 2; internal engine faults exit 3.
fn exit_code_for(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(EngineError::Fault(_)) = cause.downcast_ref::<EngineError>() {
            return 3;
        }
    }
    2
}

fn cmd_analytic(args: AnalyticArgs) -> anyhow::Result<()> {
    let text = if args.grid {
        let mut out = String::from(output::ANALYTIC_CSV_HEADER);
        out.push('\n');
        for i in 1..=19u32 {
            let alpha = f64::from(i) * 0.05;
            for gamma in 1..=16u32 {
                let report = AnalyticReport::compute(AnalyticInputs {
                    alpha,
                    gamma,
                    speed_ratio: args.speed_ratio,
                })?;
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    fmt(alpha),
                    gamma,
                    fmt(args.speed_ratio),
                    fmt(report.rho_steady),
                    fmt(report.expected_tokens),
                    fmt(report.pipespec_rate),
                    fmt(report.sd_speedup),
                    fmt(report.pipespec_ideal),
                ));
            }
        }
        out
    } else {
        let report = AnalyticReport::compute(AnalyticInputs {
            alpha: args.alpha,
            gamma: args.gamma,
            speed_ratio: args.speed_ratio,
        })?;
        format!(
            "alpha           = {}\ngamma           = {}\nspeed_ratio     = {}\n{report}\n",
            fmt(args.alpha),
            args.gamma,
            fmt(args.speed_ratio)
        )
    };
    match args.out {
        Some(path) => {
            std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{text}"),
    }
    Ok(())
}

/// Build the per-stage models a config asks for: seeded oracles by default,
/// a recorded trace when one is configured.
fn build_models(
    experiment: &ExperimentConfig,
    pipeline: &PipelineConfig,
    config_dir: &Path,
) -> anyhow::Result<Vec<Box<dyn pipespec::oracle::Model>>> {
    match &experiment.trace {
        None => Ok(oracle_models(pipeline).map_err(anyhow::Error::from)?),
        Some(trace_cfg) => {
            let path = config_dir.join(&trace_cfg.path);
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading trace {}", path.display()))?;
            let trace = Trace::parse(&text).map_err(anyhow::Error::from)?;
            if trace.num_stages() != pipeline.num_stages() {
                return Err(anyhow!(
                    "trace has {} stages but the pipeline has {}",
                    trace.num_stages(),
                    pipeline.num_stages()
                ));
            }
            if trace.max_token() >= pipeline.vocab_size {
                return Err(anyhow!(
                    "trace token {} exceeds vocab_size {}",
                    trace.max_token(),
                    pipeline.vocab_size
                ));
            }
            let beyond = pipeline.end_token.unwrap_or(TokenId(0));
            Ok(trace.models(beyond))
        }
    }
}

fn cmd_simulate(args: SimulateArgs, force_mode: Option<RunMode>) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))?;
    let experiment = ExperimentConfig::parse(&text).map_err(|e| anyhow!(e))?;
    let config_dir = args
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let run_mode = force_mode.unwrap_or(experiment.mode);
    let modes = run_mode.modes();
    let weights = EnergyWeights(experiment.energy.as_ref().map(|e| e.weights.clone()));

    // the baseline run everything is measured against
    let baseline_cfg = experiment
        .pipeline(Mode::Autoregressive, args.seed)
        .map_err(|e| anyhow!(e))?;
    let models = build_models(&experiment, &baseline_cfg, &config_dir)?;
    let baseline = run(&baseline_cfg, &models)?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    let mut blocks: BTreeMap<String, RunBlock> = BTreeMap::new();
    let mut metric_rows: Vec<(u64, MetricsReport)> = Vec::new();
    let mut histogram_rows: Vec<(String, std::collections::BTreeMap<u32, u64>)> = Vec::new();
    for mode in modes {
        let result = if mode == Mode::Autoregressive {
            baseline.clone()
        } else {
            let cfg = experiment
                .pipeline(mode, args.seed)
                .map_err(|e| anyhow!(e))?;
            run(&cfg, &models)?
        };
        let metrics = summarize(&result, &baseline, &weights)?;
        println!(
            "{}: {} tokens in {} time units, {} time/token, speedup {}",
            mode,
            metrics.tokens,
            fmt(metrics.total_time),
            fmt(metrics.time_per_token),
            fmt(metrics.speedup_vs_ar),
        );
        if args.emit_events {
            let log = EventLog::from_result(&result);
            let path = args.out.join(format!("events_{mode}.jsonl"));
            std::fs::write(&path, log.to_jsonl())
                .with_context(|| format!("writing {}", path.display()))?;
        }
        metric_rows.push((result.config.seed, metrics.clone()));
        histogram_rows.push((mode.to_string(), result.accept_histogram.clone()));
        blocks.insert(
            mode.to_string(),
            RunBlock {
                metrics,
                result: RunSummary::from_result(&result),
            },
        );
    }

    write_run_outputs(&args.out, &blocks, &metric_rows, &histogram_rows)?;
    Ok(())
}

fn write_run_outputs(
    out_dir: &Path,
    blocks: &BTreeMap<String, RunBlock>,
    metric_rows: &[(u64, MetricsReport)],
    histogram_rows: &[(String, std::collections::BTreeMap<u32, u64>)],
) -> anyhow::Result<()> {
    #[derive(serde::Serialize)]
    struct SimDoc<'a> {
        schema_version: u32,
        blocks: &'a BTreeMap<String, RunBlock>,
    }
    let doc = SimDoc {
        schema_version: pipespec::engine::SCHEMA_VERSION,
        blocks,
    };
    let json_path = out_dir.join("run.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&doc)?)
        .with_context(|| format!("writing {}", json_path.display()))?;

    let rows: Vec<(u64, &MetricsReport)> = metric_rows.iter().map(|(s, m)| (*s, m)).collect();
    std::fs::write(out_dir.join("metrics.csv"), output::metrics_csv(&rows))?;
    let hist_refs: Vec<(&str, &std::collections::BTreeMap<u32, u64>)> = histogram_rows
        .iter()
        .map(|(m, h)| (m.as_str(), h))
        .collect();
    std::fs::write(
        out_dir.join("histogram.csv"),
        output::histogram_csv(&hist_refs),
    )?;
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))?;
    let experiment = ExperimentConfig::parse(&text).map_err(|e| anyhow!(e))?;
    if experiment.trace.is_some() {
        return Err(anyhow!(
            "sweeps use oracle models; remove the [trace] section"
        ));
    }
    let axis: SweepAxis = match (&args.axis, experiment.sweep_axis().map_err(|e| anyhow!(e))?) {
        (Some(s), _) => s.parse().map_err(anyhow::Error::from)?,
        (None, Some(axis)) => axis,
        (None, None) => {
            return Err(anyhow!(
                "no sweep axis: pass --axis or add a [sweep] section to the config"
            ))
        }
    };
    let values: Vec<f64> = match (&args.values, &experiment.sweep) {
        (Some(v), _) => v.clone(),
        (None, Some(s)) => s.values.clone(),
        (None, None) => {
            return Err(anyhow!(
                "no sweep values: pass --values or add a [sweep] section to the config"
            ))
        }
    };
    if values.is_empty() {
        return Err(anyhow!("sweep values must be non-empty"));
    }
    let base = experiment
        .pipeline(Mode::PipespecAsync, args.seed)
        .map_err(|e| anyhow!(e))?;
    let modes = experiment.mode.modes();
    let rows = sweep(&base, axis, &values, &modes)?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let csv = output::sweep_csv(&rows);
    let path = args.out.join("sweep.csv");
    std::fs::write(&path, &csv).with_context(|| format!("writing {}", path.display()))?;
    print!("{csv}");
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.events)
        .with_context(|| format!("reading event log {}", args.events.display()))?;
    let log = EventLog::parse_jsonl(&text).map_err(anyhow::Error::from)?;
    let result: RunResult = replay(&log).map_err(anyhow::Error::from)?;
    println!(
        "replayed {} events: {} tokens in {} time units ({} mode, seed {})",
        log.events.len(),
        result.final_sequence.len(),
        fmt(result.total_time),
        result.config.mode,
        result.config.seed,
    );
    if let Some(path) = args.out {
        let summary = RunSummary::from_result(&result);
        std::fs::write(&path, serde_json::to_string_pretty(&summary)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
