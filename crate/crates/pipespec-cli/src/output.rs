//! Deterministic writers for run results: JSON documents and plain CSV
//! tables. Column sets are part of the tool's contract and are pinned by
//! tests; map-like data is emitted in sorted order so identical runs write
//! byte-identical files.

use pipespec::engine::RunResult;
use pipespec::metrics::{MetricsReport, SweepRow};
use serde::Serialize;

pub const METRICS_CSV_HEADER: &str = "mode,seed,tokens,total_time,time_per_token,speedup_vs_ar,\
fallback_steps,rollbacks_total,final_busy_fraction,energy_proxy";

pub const HISTOGRAM_CSV_HEADER: &str = "mode,tokens_per_verify_step,count";

pub const SWEEP_CSV_HEADER: &str =
    "mode,axis,value,tokens,total_time,time_per_token,speedup_vs_ar,rollbacks";

pub const ANALYTIC_CSV_HEADER: &str =
    "alpha,gamma,speed_ratio,rho_steady,expected_tokens,pipespec_rate,sd_speedup,pipespec_ideal";

/// One simulated mode in the combined JSON document.
#[derive(Debug, Serialize)]
pub struct RunBlock {
    pub metrics: MetricsReport,
    pub result: RunSummary,
}

/// A `RunResult` without its event log (events go to their own file when
/// requested).
#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub config: pipespec::types::PipelineConfig,
    pub final_sequence: Vec<pipespec::types::TokenId>,
    pub total_time: f64,
    pub per_stage: Vec<pipespec::engine::StageStats>,
    pub accept_histogram: std::collections::BTreeMap<u32, u64>,
    pub fallback_steps: u64,
}

impl RunSummary {
    pub fn from_result(result: &RunResult) -> RunSummary {
        RunSummary {
            config: result.config.clone(),
            final_sequence: result.final_sequence.clone(),
            total_time: result.total_time,
            per_stage: result.per_stage.clone(),
            accept_histogram: result.accept_histogram.clone(),
            fallback_steps: result.fallback_steps,
        }
    }
}

pub fn metrics_csv(rows: &[(u64, &MetricsReport)]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for (seed, m) in rows {
        let rollbacks: u64 = m.rollbacks.iter().sum();
        let final_busy = m.busy_fraction.last().copied().unwrap_or(0.0);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            m.mode,
            seed,
            m.tokens,
            fmt(m.total_time),
            fmt(m.time_per_token),
            fmt(m.speedup_vs_ar),
            m.fallback_steps,
            rollbacks,
            fmt(final_busy),
            fmt(m.energy_proxy),
        ));
    }
    out
}

pub fn histogram_csv(rows: &[(&str, &std::collections::BTreeMap<u32, u64>)]) -> String {
    let mut out = String::from(HISTOGRAM_CSV_HEADER);
    out.push('\n');
    for (mode, hist) in rows {
        for (k, v) in hist.iter() {
            out.push_str(&format!("{mode},{k},{v}\n"));
        }
    }
    out
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.mode,
            r.axis,
            fmt(r.value),
            r.tokens,
            fmt(r.total_time),
            fmt(r.time_per_token),
            fmt(r.speedup_vs_ar),
            r.rollbacks,
        ));
    }
    out
}

/// Compact float formatting that survives round trips: integral values
/// print without a trailing `.0` jungle, everything else with full
/// precision via the shortest representation.
pub fn fmt(v: f64) -> String {
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_is_stable() {
        assert_eq!(fmt(1.0), "1.0");
        assert_eq!(fmt(0.5434), "0.5434");
        assert_eq!(fmt(18.0), "18.0");
    }

    #[test]
    fn csv_headers_are_pinned() {
        assert_eq!(
            METRICS_CSV_HEADER.split(',').count(),
            10,
            "metrics column set changed; update the documented schema"
        );
        assert_eq!(SWEEP_CSV_HEADER.split(',').count(), 8);
        assert_eq!(ANALYTIC_CSV_HEADER.split(',').count(), 8);
        assert_eq!(HISTOGRAM_CSV_HEADER.split(',').count(), 3);
    }
}
