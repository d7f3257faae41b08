//! Trace-driven models: replay a recorded token stream instead of synthetic
//! oracles, so acceptance patterns measured elsewhere can be fed through the
//! engine without changes.
//!
//! The file format is line-delimited JSON, one record per position:
//!
//! ```text
//! {"position":0,"drafts":[17,42],"final":42}
//! {"position":1,"drafts":[8,8],"final":8}
//! ```
//!
//! `drafts[i]` is the token stage i proposes at that position and `final`
//! is the last stage's token. Trace models look tokens up by position
//! (context length), so re-predictions after a rollback return the recorded
//! token again regardless of the new prefix content.

use crate::buffer::Context;
use crate::oracle::Model;
use crate::types::{ConfigError, TokenId};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// One recorded generation position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub position: usize,
    pub drafts: Vec<u32>,
    pub final_token: u32,
}

/// A parsed trace: per-position tokens for every stage.
#[derive(Debug, Clone)]
pub struct Trace {
    records: Vec<TraceRecord>,
    num_stages: usize,
}

impl Trace {
    /// Parse line-delimited records, checking positions are 0,1,2,... and
    /// every record names the same number of draft stages.
    pub fn parse(text: &str) -> Result<Trace, ConfigError> {
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let rec: TraceRecord = serde_json::from_str(line)
                .map_err(|e| ConfigError::new(format!("trace line {}: {e}", lineno + 1)))?;
            records.push(rec);
        }
        if records.is_empty() {
            return Err(ConfigError::new("trace contains no records"));
        }
        let num_drafts = records[0].drafts.len();
        if num_drafts == 0 {
            return Err(ConfigError::new(
                "trace records need at least one draft stage",
            ));
        }
        for (i, rec) in records.iter().enumerate() {
            if rec.position != i {
                return Err(ConfigError::new(format!(
                    "trace positions must be contiguous from 0; record {i} has position {}",
                    rec.position
                )));
            }
            if rec.drafts.len() != num_drafts {
                return Err(ConfigError::new(format!(
                    "trace record {i} has {} draft entries, expected {num_drafts}",
                    rec.drafts.len()
                )));
            }
        }
        Ok(Trace {
            records,
            num_stages: num_drafts + 1,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_stages(&self) -> usize {
        self.num_stages
    }

    /// Largest token id appearing anywhere in the trace.
    pub fn max_token(&self) -> u32 {
        self.records
            .iter()
            .flat_map(|r| {
                r.drafts
                    .iter()
                    .copied()
                    .chain(std::iter::once(r.final_token))
            })
            .max()
            .unwrap_or(0)
    }

    fn token_at(&self, stage: usize, position: usize, beyond: TokenId) -> TokenId {
        match self.records.get(position) {
            None => beyond,
            Some(rec) if stage + 1 == self.num_stages => TokenId(rec.final_token),
            Some(rec) => TokenId(rec.drafts[stage]),
        }
    }

    /// One model per stage. Positions past the end of the trace yield
    /// `beyond` (typically the configured end token).
    pub fn models(&self, beyond: TokenId) -> Vec<Box<dyn Model>> {
        let shared = Arc::new(self.clone());
        (0..self.num_stages)
            .map(|stage| {
                Box::new(TraceModel {
                    trace: Arc::clone(&shared),
                    stage,
                    beyond,
                }) as Box<dyn Model>
            })
            .collect()
    }
}

/// A single stage's view of a trace.
#[derive(Debug, Clone)]
pub struct TraceModel {
    trace: Arc<Trace>,
    stage: usize,
    beyond: TokenId,
}

impl Model for TraceModel {
    fn next_token(&self, ctx: Context<'_>) -> TokenId {
        self.trace.token_at(self.stage, ctx.len(), self.beyond)
    }
}
