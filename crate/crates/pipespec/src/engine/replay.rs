//! Reconstruct a run from its event log.
//!
//! The log carries every token the engine committed, so replay needs no
//! models and no re-simulation: it folds the events over per-stage buffers,
//! validating positions, ordering, and rollback consistency as it goes, and
//! rebuilds the same `RunResult` (final sequence, timing, histograms, busy
//! accounting) the original run produced.

use super::{Event, EventKind, RunResult, StageStats};
use crate::buffer::TokenBuffer;
use crate::types::PipelineConfig;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Version of the event-log schema this build reads and writes.
pub const SCHEMA_VERSION: u32 = 1;

/// A serializable run record: header plus ordered events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub schema_version: u32,
    pub config: PipelineConfig,
    pub events: Vec<Event>,
}

impl EventLog {
    pub fn from_result(result: &RunResult) -> EventLog {
        EventLog {
            schema_version: SCHEMA_VERSION,
            config: result.config.clone(),
            events: result.events.clone(),
        }
    }

    /// Serialize as line-delimited JSON: a header line, then one event per
    /// line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = serde_json::json!({
            "schema_version": self.schema_version,
            "config": self.config,
        });
        out.push_str(&header.to_string());
        out.push('\n');
        for event in &self.events {
            out.push_str(&serde_json::to_string(event).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn parse_jsonl(text: &str) -> Result<EventLog, ReplayError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header_line = lines.next().ok_or(ReplayError::Empty)?;
        #[derive(Deserialize)]
        struct Header {
            schema_version: u32,
            config: PipelineConfig,
        }
        let header: Header = serde_json::from_str(header_line)
            .map_err(|e| ReplayError::Malformed(format!("header: {e}")))?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(ReplayError::SchemaVersion {
                found: header.schema_version,
                supported: SCHEMA_VERSION,
            });
        }
        let mut events = Vec::new();
        for (i, line) in lines.enumerate() {
            let event: Event = serde_json::from_str(line)
                .map_err(|e| ReplayError::Malformed(format!("event line {}: {e}", i + 2)))?;
            events.push(event);
        }
        Ok(EventLog {
            schema_version: header.schema_version,
            config: header.config,
            events,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("event log is empty")]
    Empty,
    #[error("unsupported event-log schema version {found} (this build supports {supported})")]
    SchemaVersion { found: u32, supported: u32 },
    #[error("malformed event log: {0}")]
    Malformed(String),
    #[error("event log fails integrity check: {0}")]
    Integrity(String),
    #[error("event log is truncated: no finish marker")]
    Truncated,
}

/// Fold an event log back into the run it records.
pub fn replay(log: &EventLog) -> Result<RunResult, ReplayError> {
    log.config
        .validate()
        .map_err(|e| ReplayError::Malformed(e.to_string()))?;
    let num_stages = log.config.num_stages();
    let last = log.config.last_stage();
    let mut bufs: Vec<TokenBuffer> = (0..num_stages).map(|_| TokenBuffer::new()).collect();
    let mut stats: Vec<StageStats> = vec![StageStats::default(); num_stages];
    let mut histogram: BTreeMap<u32, u64> = BTreeMap::new();
    let mut total_time = 0.0f64;
    let mut last_seq: Option<u64> = None;
    let mut finished_tokens: Option<usize> = None;

    for event in &log.events {
        if finished_tokens.is_some() {
            return Err(ReplayError::Integrity(format!(
                "event {} after the finish marker",
                event.seq
            )));
        }
        if event.stage >= num_stages {
            return Err(ReplayError::Integrity(format!(
                "event {} names stage {} of {num_stages}",
                event.seq, event.stage
            )));
        }
        if let Some(prev) = last_seq {
            if event.seq <= prev {
                return Err(ReplayError::Integrity(format!(
                    "event sequence not increasing at seq {}",
                    event.seq
                )));
            }
        }
        if event.time < total_time {
            return Err(ReplayError::Integrity(format!(
                "time moves backwards at seq {}",
                event.seq
            )));
        }
        last_seq = Some(event.seq);
        total_time = event.time;
        let latency = log.config.stages[event.stage].latency_per_token;

        match &event.kind {
            EventKind::DraftDone { position, token } => {
                if *position != bufs[event.stage].len() {
                    return Err(ReplayError::Integrity(format!(
                        "seq {}: draft at position {position} but stage {} holds {}",
                        event.seq,
                        event.stage,
                        bufs[event.stage].len()
                    )));
                }
                bufs[event.stage].push(*token);
                if event.stage == last {
                    let len = bufs[last].len();
                    bufs[last].mark_verified(len);
                }
                stats[event.stage].own_token_steps += 1;
                stats[event.stage].busy_time += latency;
            }
            EventKind::VerifyDone {
                consumed,
                accepted,
                appended_at,
                appended,
                full_accept: _,
            } => {
                if event.stage == 0 {
                    return Err(ReplayError::Integrity(format!(
                        "seq {}: verify pass on the drafting stage",
                        event.seq
                    )));
                }
                if *appended_at != bufs[event.stage].len() {
                    return Err(ReplayError::Integrity(format!(
                        "seq {}: verify appends at {appended_at} but stage {} holds {}",
                        event.seq,
                        event.stage,
                        bufs[event.stage].len()
                    )));
                }
                bufs[event.stage].append(appended);
                stats[event.stage].verify_steps += 1;
                stats[event.stage].comparisons += {
                    // accepted comparisons plus the mismatch, when present
                    let extra = u64::from(*consumed > *accepted);
                    *accepted as u64 + extra
                };
                stats[event.stage].accepted += *accepted as u64;
                if event.stage == last {
                    let len = bufs[last].len();
                    bufs[last].mark_verified(len);
                    *histogram.entry(appended.len() as u32).or_insert(0) += 1;
                }
                stats[event.stage].busy_time += latency;
            }
            EventKind::RollbackApplied {
                keep,
                origin,
                discarded,
            } => {
                if *origin <= event.stage || *origin >= num_stages {
                    return Err(ReplayError::Integrity(format!(
                        "seq {}: rollback origin {origin} does not dominate stage {}",
                        event.seq, event.stage
                    )));
                }
                if *keep > bufs[*origin].len() {
                    return Err(ReplayError::Integrity(format!(
                        "seq {}: rollback keeps {keep} tokens but origin holds {}",
                        event.seq,
                        bufs[*origin].len()
                    )));
                }
                let (low, high) = bufs.split_at_mut(*origin);
                let source = &high[0];
                let target = &mut low[event.stage];
                let before = target.len();
                let common = target.common_prefix_len(source).min(*keep);
                // a resync that the target already prefix-extends keeps the
                // extension; anything else becomes the source's content
                if !(common == *keep && *discarded == 0) {
                    if before - common != *discarded {
                        return Err(ReplayError::Integrity(format!(
                            "seq {}: rollback discarded {}, log says {discarded}",
                            event.seq,
                            before - common
                        )));
                    }
                    target
                        .rollback(common)
                        .map_err(|e| ReplayError::Integrity(e.to_string()))?;
                    target.append(&source.tokens()[common..*keep]);
                }
                let marked = (*keep).min(target.len());
                target.mark_verified(marked);
                stats[event.stage].rollbacks_received += u64::from(*discarded > 0);
            }
            EventKind::Finished { total_tokens } => {
                if *total_tokens != bufs[last].len() {
                    return Err(ReplayError::Integrity(format!(
                        "finish marker says {total_tokens} tokens, final stage holds {}",
                        bufs[last].len()
                    )));
                }
                finished_tokens = Some(*total_tokens);
            }
        }
    }

    let total = finished_tokens.ok_or(ReplayError::Truncated)?;
    if total > log.config.max_tokens {
        return Err(ReplayError::Integrity(format!(
            "final sequence of {total} exceeds the {} cap",
            log.config.max_tokens
        )));
    }
    for (stage, st) in stats.iter_mut().enumerate() {
        st.busy_fraction = if total_time > 0.0 {
            st.busy_time / total_time
        } else {
            0.0
        };
        st.verified_upto = bufs[stage].verified_upto();
    }
    let fallback_steps = stats[last].own_token_steps;
    Ok(RunResult {
        config: log.config.clone(),
        final_sequence: bufs[last].tokens().to_vec(),
        total_time,
        events: log.events.clone(),
        per_stage: stats,
        accept_histogram: histogram,
        fallback_steps,
    })
}
