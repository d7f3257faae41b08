//! Executes a pipeline configuration to completion over a deterministic
//! virtual clock.
//!
//! Three modes share one protocol core:
//!
//! * autoregressive: the final stage generates every token itself;
//! * speculative_sync: lockstep rounds: each drafting stage produces its
//!   quota and blocks, each verifier runs one batch pass, and all buffers
//!   resynchronize to the final stage after its pass;
//! * pipespec_async: a discrete-event simulation in which every stage runs
//!   continuously. A verifier with pending drafts verifies them in one
//!   latency unit; a verifier with nothing pending generates its own next
//!   token instead of idling; rejections trigger rollback cascades applied
//!   as instantaneous state truncation.
//!
//! Verification is exact-match: a stage accepts the longest prefix of the
//! draft batch that equals its own predictions, appends its own token at the
//! first mismatch (the correction), and appends its own next token after a
//! fully accepted batch (the bonus). Because every committed token equals
//! the committing stage's own prediction in its own context, the final
//! stage's output is always identical to its autoregressive stream;
//! speculation changes timing only.

mod async_pipeline;
mod replay;
mod sync;
mod threaded;

pub use replay::{replay, EventLog, ReplayError, SCHEMA_VERSION};
pub use threaded::run_concurrent;

use crate::buffer::{extend_context_hash, Context, TokenBuffer};
use crate::oracle::{oracle_models, Model};
use crate::types::{ConfigError, Mode, PipelineConfig, StageSpec, TokenId};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Engine failure: either a bad configuration or an internal invariant
/// violation (a bug, reported with diagnostics rather than silently).
#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("engine fault: {0}")]
    Fault(String),
}

impl From<crate::buffer::BufferError> for EngineError {
    fn from(e: crate::buffer::BufferError) -> Self {
        EngineError::Fault(e.to_string())
    }
}

/// What happened at one point of the run. `DraftDone` covers every
/// single-token generation: stage-0 drafts, autoregressive steps, and a
/// verifier's fallback steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    DraftDone {
        position: usize,
        token: TokenId,
    },
    VerifyDone {
        /// Draft tokens consumed from the upstream buffer by this pass.
        consumed: usize,
        /// Longest matching prefix of the batch.
        accepted: usize,
        /// Position of the first appended token.
        appended_at: usize,
        /// Accepted tokens plus the correction or bonus token, after any
        /// generation-cap trimming.
        appended: Vec<TokenId>,
        full_accept: bool,
    },
    RollbackApplied {
        /// Length of the origin stage's buffer at signal time.
        keep: usize,
        origin: usize,
        /// Tokens this stage discarded; zero for a no-op resync.
        discarded: usize,
    },
    Finished {
        total_tokens: usize,
    },
}

/// A timestamped, totally ordered log entry. Ties in time are broken by the
/// scheduler deterministically; `seq` records the resulting global order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub time: f64,
    pub stage: usize,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Per-stage accounting over one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    /// Virtual time spent generating or verifying.
    pub busy_time: f64,
    /// busy_time / total_time.
    pub busy_fraction: f64,
    /// Batch verification passes.
    pub verify_steps: u64,
    /// Single own-token generations: drafts, autoregressive steps, and
    /// fallbacks.
    pub own_token_steps: u64,
    /// Rollback signals applied to this stage.
    pub rollbacks_received: u64,
    /// Draft tokens compared against this stage's own predictions.
    pub comparisons: u64,
    /// Comparisons that matched.
    pub accepted: u64,
    /// Final committed-prefix frontier of this stage's buffer.
    pub verified_upto: usize,
}

impl StageStats {
    /// Empirical acceptance rate seen by this verifier.
    pub fn acceptance_rate(&self) -> f64 {
        if self.comparisons == 0 {
            0.0
        } else {
            self.accepted as f64 / self.comparisons as f64
        }
    }
}

/// Everything a run produces: the verified sequence, the event log, and
/// derived statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: PipelineConfig,
    /// The final stage's committed output.
    pub final_sequence: Vec<TokenId>,
    pub total_time: f64,
    pub events: Vec<Event>,
    pub per_stage: Vec<StageStats>,
    /// Tokens committed per verify pass at the final stage (accepted prefix
    /// plus correction or bonus), keyed by count.
    pub accept_histogram: BTreeMap<u32, u64>,
    /// Single-token steps at the final stage (fallbacks and autoregressive
    /// generation).
    pub fallback_steps: u64,
}

impl RunResult {
    pub fn final_stage(&self) -> &StageStats {
        self.per_stage.last().expect("at least one stage")
    }

    /// Fraction of final-stage steps that verified a nonempty batch.
    pub fn verify_probability(&self) -> f64 {
        let v = self.final_stage().verify_steps;
        let total = v + self.fallback_steps;
        if total == 0 {
            0.0
        } else {
            v as f64 / total as f64
        }
    }

    /// Mean tokens committed per final-stage step.
    pub fn tokens_per_step(&self) -> f64 {
        let steps = self.final_stage().verify_steps + self.fallback_steps;
        if steps == 0 {
            0.0
        } else {
            self.final_sequence.len() as f64 / steps as f64
        }
    }

    /// Virtual time per committed token.
    pub fn time_per_token(&self) -> f64 {
        if self.final_sequence.is_empty() {
            0.0
        } else {
            self.total_time / self.final_sequence.len() as f64
        }
    }

    /// Check token accounting: histogram mass plus single-token steps must
    /// equal the final sequence length.
    fn check_accounting(&self) -> Result<(), EngineError> {
        let verified: u64 = self
            .accept_histogram
            .iter()
            .map(|(k, v)| u64::from(*k) * v)
            .sum();
        let total = verified + self.fallback_steps;
        if total != self.final_sequence.len() as u64 {
            return Err(EngineError::Fault(format!(
                "token accounting mismatch: histogram {verified} + fallbacks {} != |final| {}",
                self.fallback_steps,
                self.final_sequence.len()
            )));
        }
        Ok(())
    }
}

/// Run a configuration against one model per stage.
pub fn run(config: &PipelineConfig, models: &[Box<dyn Model>]) -> Result<RunResult, EngineError> {
    config.validate()?;
    if models.len() != config.num_stages() {
        return Err(ConfigError::new(format!(
            "model count {} does not match stage count {}",
            models.len(),
            config.num_stages()
        ))
        .into());
    }
    let result = match config.mode {
        Mode::Autoregressive => run_autoregressive(config, models),
        Mode::SpeculativeSync => sync::run_sync(config, models),
        Mode::PipespecAsync => async_pipeline::run_async(config, models),
    }?;
    result.check_accounting()?;
    Ok(result)
}

/// Run with the config's seeded oracle models.
pub fn run_with_oracles(config: &PipelineConfig) -> Result<RunResult, EngineError> {
    let models = oracle_models(config)?;
    run(config, &models)
}

/// Batch cap for a verify pass; an unset window means take everything.
pub(crate) fn effective_window(stage: &StageSpec) -> usize {
    stage.window.map(|w| w as usize).unwrap_or(usize::MAX)
}

pub(crate) fn min_pending(stage: &StageSpec) -> usize {
    (stage.lookahead.max(1)) as usize
}

/// Outcome of one verify pass, computed when the pass starts from immutable
/// snapshots and applied when it completes.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct VerifyOutcome {
    /// Draft tokens consumed (accepted prefix, plus the mismatching token).
    pub consumed: usize,
    /// Longest matching prefix length.
    pub accepted: usize,
    /// accepted tokens ++ correction-or-bonus.
    pub appended: Vec<TokenId>,
    pub full_accept: bool,
    pub comparisons: u64,
}

/// Compare a draft batch against the stage's own sequential predictions.
/// The batch must directly continue `own`'s content.
pub(crate) fn compute_verify(
    own: &TokenBuffer,
    batch: &[TokenId],
    model: &dyn Model,
) -> VerifyOutcome {
    let base = own.tokens();
    let mut hash = own.prefix_hash(base.len());
    let mut appended = Vec::with_capacity(batch.len() + 1);
    let mut accepted = 0usize;
    let mut comparisons = 0u64;
    for &draft in batch {
        let ctx = Context::from_parts(base, &appended[..accepted], hash);
        let pred = model.next_token(ctx);
        comparisons += 1;
        appended.push(pred);
        if pred == draft {
            accepted += 1;
            hash = extend_context_hash(hash, pred);
        } else {
            // first mismatch: the stage's own token stands as the correction
            return VerifyOutcome {
                consumed: accepted + 1,
                accepted,
                appended,
                full_accept: false,
                comparisons,
            };
        }
    }
    // whole batch accepted: bonus token from the stage's own prediction
    let ctx = Context::from_parts(base, &appended[..accepted], hash);
    let bonus = model.next_token(ctx);
    appended.push(bonus);
    VerifyOutcome {
        consumed: batch.len(),
        accepted,
        appended,
        full_accept: true,
        comparisons,
    }
}

/// Append tokens to the final stage respecting the generation cap and the
/// optional end token. Returns (tokens actually appended, finished).
pub(crate) fn commit_final(
    buf: &mut TokenBuffer,
    tokens: &[TokenId],
    config: &PipelineConfig,
) -> (usize, bool) {
    let mut appended = 0;
    for &tok in tokens {
        if buf.len() >= config.max_tokens {
            return (appended, true);
        }
        buf.push(tok);
        appended += 1;
        if config.end_token == Some(tok) {
            return (appended, true);
        }
    }
    (appended, buf.len() >= config.max_tokens)
}

/// Event sink shared by all execution modes.
#[derive(Debug, Default)]
pub(crate) struct EventLogBuilder {
    events: Vec<Event>,
    next_seq: u64,
}

impl EventLogBuilder {
    pub fn emit(&mut self, time: f64, stage: usize, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.events.push(Event {
            seq,
            time,
            stage,
            kind,
        });
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }
}

/// The autoregressive baseline: the final stage generates token after token.
pub(crate) fn run_autoregressive(
    config: &PipelineConfig,
    models: &[Box<dyn Model>],
) -> Result<RunResult, EngineError> {
    let last = config.last_stage();
    let latency = config.stages[last].latency_per_token;
    let model = models[last].as_ref();
    let mut buf = TokenBuffer::new();
    let mut log = EventLogBuilder::default();
    let mut time = 0.0;
    let mut steps = 0u64;
    loop {
        let token = model.next_token(buf.context());
        time += latency;
        let (_, finished) = commit_final(&mut buf, &[token], config);
        steps += 1;
        log.emit(
            time,
            last,
            EventKind::DraftDone {
                position: buf.len() - 1,
                token,
            },
        );
        if finished {
            break;
        }
    }
    buf.mark_verified(buf.len());
    log.emit(
        time,
        last,
        EventKind::Finished {
            total_tokens: buf.len(),
        },
    );

    let mut per_stage = vec![StageStats::default(); config.num_stages()];
    per_stage[last] = StageStats {
        busy_time: time,
        busy_fraction: 1.0,
        verify_steps: 0,
        own_token_steps: steps,
        rollbacks_received: 0,
        comparisons: 0,
        accepted: 0,
        verified_upto: buf.len(),
    };
    Ok(RunResult {
        config: config.clone(),
        final_sequence: buf.tokens().to_vec(),
        total_time: time,
        events: log.into_events(),
        per_stage,
        accept_histogram: BTreeMap::new(),
        fallback_steps: steps,
    })
}

/// The exact token stream the final stage would produce alone; used by
/// losslessness checks.
pub fn autoregressive_reference(
    config: &PipelineConfig,
    models: &[Box<dyn Model>],
) -> Result<Vec<TokenId>, EngineError> {
    let ar = config.autoregressive_baseline();
    Ok(run(&ar, models)?.final_sequence)
}
