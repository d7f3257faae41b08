//! Post-processing of run results into the measurement surfaces the
//! simulator reports: throughput and speedup, per-stage utilization,
//! acceptance histograms, rollback counts, a dimensionless energy proxy,
//! and parameter sweeps.
//!
//! Everything here is pure computation over immutable run results; speedups
//! are always measured against a simulated autoregressive baseline with the
//! identical seed and problem, never against closed-form predictions.

use crate::engine::{run_with_oracles, EngineError, RunResult};
use crate::types::{ConfigError, Mode, PipelineConfig};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Derived metrics for one run, relative to its autoregressive baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: Mode,
    pub total_time: f64,
    pub tokens: usize,
    /// total_time / tokens.
    pub time_per_token: f64,
    /// Baseline total time divided by this run's total time; exactly 1 for
    /// the baseline itself.
    pub speedup_vs_ar: f64,
    pub accept_histogram: BTreeMap<u32, u64>,
    /// Single-token fallback steps at the final stage.
    pub fallback_steps: u64,
    pub busy_fraction: Vec<f64>,
    pub rollbacks: Vec<u64>,
    /// Sum over stages of busy time weighted by relative power draw.
    pub energy_proxy: f64,
}

/// Relative power weights per stage for the energy proxy. Defaults to 1.0
/// everywhere.
#[derive(Debug, Clone, Default)]
pub struct EnergyWeights(pub Option<Vec<f64>>);

impl EnergyWeights {
    fn weight(&self, stage: usize) -> f64 {
        self.0
            .as_ref()
            .and_then(|w| w.get(stage).copied())
            .unwrap_or(1.0)
    }
}

/// Summarize a run against its autoregressive baseline. The baseline must
/// be the same generation problem (stages, seed, caps) run in
/// autoregressive mode.
pub fn summarize(
    result: &RunResult,
    baseline: &RunResult,
    weights: &EnergyWeights,
) -> Result<MetricsReport, ConfigError> {
    if baseline.config.mode != Mode::Autoregressive {
        return Err(ConfigError::new(
            "baseline run must be in autoregressive mode",
        ));
    }
    if !result.config.same_problem(&baseline.config) {
        return Err(ConfigError::new(
            "result and baseline describe different problems (stages, seed, or caps differ)",
        ));
    }
    let energy_proxy = result
        .per_stage
        .iter()
        .enumerate()
        .map(|(i, s)| s.busy_time * weights.weight(i))
        .sum();
    Ok(MetricsReport {
        mode: result.config.mode,
        total_time: result.total_time,
        tokens: result.final_sequence.len(),
        time_per_token: result.time_per_token(),
        speedup_vs_ar: baseline.total_time / result.total_time,
        accept_histogram: result.accept_histogram.clone(),
        fallback_steps: result.fallback_steps,
        busy_fraction: result.per_stage.iter().map(|s| s.busy_fraction).collect(),
        rollbacks: result
            .per_stage
            .iter()
            .map(|s| s.rollbacks_received)
            .collect(),
        energy_proxy,
    })
}

/// A sweep axis: which knob a parameter sweep turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Minimum pending drafts before a verify pass; in sync mode also the
    /// per-round draft quota.
    Lookahead,
    /// Acceptance rate on every verifier link.
    Alpha,
    /// Verify-batch window cap on every verifier.
    Gamma,
    /// Pipeline depth: keep the first `d - 1` stages plus the final stage.
    Depth,
}

impl std::str::FromStr for SweepAxis {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lookahead" => Ok(SweepAxis::Lookahead),
            "alpha" => Ok(SweepAxis::Alpha),
            "gamma" => Ok(SweepAxis::Gamma),
            "depth" => Ok(SweepAxis::Depth),
            other => Err(ConfigError::new(format!(
                "unknown sweep axis '{other}' (expected lookahead, alpha, gamma, or depth)"
            ))),
        }
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SweepAxis::Lookahead => "lookahead",
            SweepAxis::Alpha => "alpha",
            SweepAxis::Gamma => "gamma",
            SweepAxis::Depth => "depth",
        };
        f.write_str(s)
    }
}

/// One sweep measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mode: Mode,
    pub axis: SweepAxis,
    pub value: f64,
    pub tokens: usize,
    pub total_time: f64,
    pub time_per_token: f64,
    pub speedup_vs_ar: f64,
    pub rollbacks: u64,
}

/// Apply one axis value to a base configuration.
pub fn apply_axis(
    base: &PipelineConfig,
    axis: SweepAxis,
    value: f64,
) -> Result<PipelineConfig, ConfigError> {
    let mut cfg = base.clone();
    let as_count = |value: f64, what: &str| -> Result<u32, ConfigError> {
        if value < 0.0 || value.fract() != 0.0 || value > u32::MAX as f64 {
            return Err(ConfigError::new(format!(
                "{what} values must be non-negative integers, got {value}"
            )));
        }
        Ok(value as u32)
    };
    match axis {
        SweepAxis::Lookahead => {
            let v = as_count(value, "lookahead")?;
            for stage in cfg.stages.iter_mut().skip(1) {
                stage.lookahead = v;
            }
        }
        SweepAxis::Alpha => {
            if !(0.0..=1.0).contains(&value) {
                return Err(ConfigError::new(format!(
                    "alpha values must lie in [0, 1], got {value}"
                )));
            }
            for stage in cfg.stages.iter_mut().skip(1) {
                stage.acceptance_rate = value;
            }
        }
        SweepAxis::Gamma => {
            let v = as_count(value, "gamma")?;
            for stage in cfg.stages.iter_mut().skip(1) {
                stage.window = Some(v);
            }
        }
        SweepAxis::Depth => {
            let v = as_count(value, "depth")? as usize;
            if v < 2 || v > base.num_stages() {
                return Err(ConfigError::new(format!(
                    "depth values must lie in [2, {}], got {value}",
                    base.num_stages()
                )));
            }
            let mut stages: Vec<_> = base.stages[..v - 1].to_vec();
            stages.push(base.stages[base.num_stages() - 1].clone());
            cfg.stages = stages;
        }
    }
    Ok(cfg)
}

/// Run every (mode, value) combination and report long-format rows. Each
/// value's speedups are measured against its own autoregressive baseline.
pub fn sweep(
    base: &PipelineConfig,
    axis: SweepAxis,
    values: &[f64],
    modes: &[Mode],
) -> Result<Vec<SweepRow>, EngineError> {
    if values.is_empty() {
        return Err(ConfigError::new("sweep needs at least one axis value").into());
    }
    let mut rows = Vec::new();
    for &value in values {
        let cfg = apply_axis(base, axis, value)?;
        let baseline = run_with_oracles(&cfg.autoregressive_baseline())?;
        for &mode in modes {
            let result = if mode == Mode::Autoregressive {
                baseline.clone()
            } else {
                run_with_oracles(&cfg.clone().with_mode(mode))?
            };
            let report = summarize(&result, &baseline, &EnergyWeights::default())?;
            rows.push(SweepRow {
                mode,
                axis,
                value,
                tokens: report.tokens,
                total_time: report.total_time,
                time_per_token: report.time_per_token,
                speedup_vs_ar: report.speedup_vs_ar,
                rollbacks: report.rollbacks.iter().sum(),
            });
        }
    }
    Ok(rows)
}

/// The lookahead sweep both speculative modes are judged on: sync rounds
/// degrade at both extremes, the async pipeline is best at or near zero.
pub fn sweep_lookahead(
    base: &PipelineConfig,
    values: &[f64],
) -> Result<Vec<SweepRow>, EngineError> {
    sweep(
        base,
        SweepAxis::Lookahead,
        values,
        &[Mode::SpeculativeSync, Mode::PipespecAsync],
    )
}
