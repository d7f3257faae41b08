//! Asynchronous pipeline execution as a single-threaded discrete-event
//! simulation over virtual time.
//!
//! Every stage is always doing one of three things:
//!
//! * drafting (stage 0) or generating a fallback token (a verifier with no
//!   pending drafts), one token per latency unit;
//! * verifying a snapshot batch of pending drafts in one latency unit;
//! * waiting for its lookahead threshold (only when some drafts are pending
//!   but fewer than the threshold).
//!
//! A verifier's consumption frontier tracks how far into the upstream buffer
//! it has read. Positions below its own committed length are alignment
//! checks: the upstream token must equal the already-committed own token
//! (this is how a bonus or fallback token gets confirmed by the drafter's
//! parallel stream). An alignment mismatch means the upstream diverged, so
//! the stage rolls earlier stages back to its own content immediately and
//! spends the step generating its own next token. Fresh positions are
//! verified against the stage's own sequential predictions; the first
//! mismatch appends the stage's correction token and triggers the same
//! rollback cascade at pass completion.
//!
//! Completion events carry the epoch of the stage that scheduled them; a
//! rollback bumps the epoch of every stage it truncates, so completions of
//! discarded work are dropped as stale when popped.

use super::{
    commit_final, compute_verify, effective_window, min_pending, EngineError, EventKind,
    EventLogBuilder, RunResult, StageStats, VerifyOutcome,
};
use crate::buffer::TokenBuffer;
use crate::oracle::Model;
use crate::types::{PipelineConfig, TokenId};
use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

#[derive(Debug)]
enum Work {
    OwnToken { token: TokenId },
    Verify(VerifyOutcome),
}

#[derive(Debug)]
struct StageState {
    buf: TokenBuffer,
    /// Frontier into the upstream stage's buffer (unused for stage 0).
    consume: usize,
    epoch: u64,
    work: Option<Work>,
    busy_time: f64,
    verify_steps: u64,
    own_token_steps: u64,
    rollbacks_received: u64,
    comparisons: u64,
    accepted: u64,
}

impl StageState {
    fn new() -> Self {
        StageState {
            buf: TokenBuffer::new(),
            consume: 0,
            epoch: 0,
            work: None,
            busy_time: 0.0,
            verify_steps: 0,
            own_token_steps: 0,
            rollbacks_received: 0,
            comparisons: 0,
            accepted: 0,
        }
    }
}

/// A scheduled work completion. The queue pops the earliest time; ties break
/// by stage index, then scheduling order, which makes the whole run
/// deterministic.
#[derive(Debug)]
struct Scheduled {
    time: f64,
    stage: usize,
    seq: u64,
    epoch: u64,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap, we pop the smallest key
        let key = |s: &Scheduled| (s.time, s.stage, s.seq);
        let (a, b) = (key(self), key(other));
        b.0.partial_cmp(&a.0)
            .expect("virtual times are finite")
            .then(b.1.cmp(&a.1))
            .then(b.2.cmp(&a.2))
    }
}

pub(crate) fn run_async(
    config: &PipelineConfig,
    models: &[Box<dyn Model>],
) -> Result<RunResult, EngineError> {
    Simulation::new(config, models).run()
}

struct Simulation<'a> {
    config: &'a PipelineConfig,
    models: &'a [Box<dyn Model>],
    stages: Vec<StageState>,
    queue: BinaryHeap<Scheduled>,
    next_sched_seq: u64,
    log: EventLogBuilder,
    histogram: BTreeMap<u32, u64>,
    finished: bool,
}

impl<'a> Simulation<'a> {
    fn new(config: &'a PipelineConfig, models: &'a [Box<dyn Model>]) -> Self {
        Simulation {
            config,
            models,
            stages: (0..config.num_stages())
                .map(|_| StageState::new())
                .collect(),
            queue: BinaryHeap::new(),
            next_sched_seq: 0,
            log: EventLogBuilder::default(),
            histogram: BTreeMap::new(),
            finished: false,
        }
    }

    fn last(&self) -> usize {
        self.config.last_stage()
    }

    fn latency(&self, stage: usize) -> f64 {
        self.config.stages[stage].latency_per_token
    }

    fn run(mut self) -> Result<RunResult, EngineError> {
        let mut now = 0.0;
        self.decide_all(0.0)?;
        while let Some(ev) = self.queue.pop() {
            if self.finished {
                break;
            }
            if ev.epoch != self.stages[ev.stage].epoch {
                continue; // completion of work discarded by a rollback
            }
            now = ev.time;
            self.complete(ev.stage, now)?;
            if self.finished {
                break;
            }
            self.decide_all(now)?;
        }
        if !self.finished {
            return Err(EngineError::Fault(
                "event queue drained before the run finished".into(),
            ));
        }
        self.log.emit(
            now,
            self.last(),
            EventKind::Finished {
                total_tokens: self.stages[self.last()].buf.len(),
            },
        );
        Ok(self.into_result(now))
    }

    /// Apply the completed work of `stage` at time `now`.
    fn complete(&mut self, stage: usize, now: f64) -> Result<(), EngineError> {
        let work = self.stages[stage]
            .work
            .take()
            .ok_or_else(|| EngineError::Fault(format!("stage {stage} completed without work")))?;
        self.stages[stage].busy_time += self.latency(stage);
        match work {
            Work::OwnToken { token } => self.apply_own_token(stage, token, now),
            Work::Verify(outcome) => self.apply_verify(stage, outcome, now),
        }
    }

    fn apply_own_token(
        &mut self,
        stage: usize,
        token: TokenId,
        now: f64,
    ) -> Result<(), EngineError> {
        let st = &mut self.stages[stage];
        st.own_token_steps += 1;
        if stage == self.config.last_stage() {
            let (appended, finished) = commit_final(&mut st.buf, &[token], self.config);
            if appended == 0 {
                return Err(EngineError::Fault(
                    "own-token step scheduled past the generation cap".into(),
                ));
            }
            let len = st.buf.len();
            st.buf.mark_verified(len);
            self.log.emit(
                now,
                stage,
                EventKind::DraftDone {
                    position: len - 1,
                    token,
                },
            );
            self.finished = finished;
        } else {
            st.buf.push(token);
            self.log.emit(
                now,
                stage,
                EventKind::DraftDone {
                    position: st.buf.len() - 1,
                    token,
                },
            );
        }
        Ok(())
    }

    fn apply_verify(
        &mut self,
        stage: usize,
        outcome: VerifyOutcome,
        now: f64,
    ) -> Result<(), EngineError> {
        let last = self.config.last_stage();
        let appended_at;
        let appended_tokens;
        let finished;
        {
            let st = &mut self.stages[stage];
            st.verify_steps += 1;
            st.comparisons += outcome.comparisons;
            st.accepted += outcome.accepted as u64;
            st.consume += outcome.consumed;
            appended_at = st.buf.len();
            if stage == last {
                let (n, fin) = commit_final(&mut st.buf, &outcome.appended, self.config);
                appended_tokens = outcome.appended[..n].to_vec();
                finished = fin;
                let len = st.buf.len();
                st.buf.mark_verified(len);
                *self
                    .histogram
                    .entry(appended_tokens.len() as u32)
                    .or_insert(0) += 1;
            } else {
                st.buf.append(&outcome.appended);
                appended_tokens = outcome.appended.clone();
                finished = false;
            }
        }
        self.log.emit(
            now,
            stage,
            EventKind::VerifyDone {
                consumed: outcome.consumed,
                accepted: outcome.accepted,
                appended_at,
                appended: appended_tokens,
                full_accept: outcome.full_accept,
            },
        );
        self.finished = finished;
        if !outcome.full_accept && !self.finished {
            self.apply_rollback(stage, now)?;
        }
        Ok(())
    }

    /// Resync every stage below `origin` to the origin's buffer content and
    /// discard their in-flight work.
    fn apply_rollback(&mut self, origin: usize, now: f64) -> Result<(), EngineError> {
        let keep = self.stages[origin].buf.len();
        for target in (0..origin).rev() {
            let (low, high) = self.stages.split_at_mut(origin);
            let source = &high[0].buf;
            let st = &mut low[target];
            let discarded = st.buf.resync_to(source)?;
            let marked = keep.min(st.buf.len());
            st.buf.mark_verified(marked);
            st.epoch += 1;
            st.work = None;
            if target > 0 {
                st.consume = st.buf.len();
            }
            st.rollbacks_received += u64::from(discarded > 0);
            self.log.emit(
                now,
                target,
                EventKind::RollbackApplied {
                    keep,
                    origin,
                    discarded,
                },
            );
        }
        // the origin has consumed-and-settled everything upstream
        self.stages[origin].consume = keep;
        Ok(())
    }

    /// Give every idle stage new work. Highest stages decide first so that a
    /// divergence-triggered rollback lands before lower stages plan against
    /// stale buffers.
    fn decide_all(&mut self, now: f64) -> Result<(), EngineError> {
        for stage in (0..self.stages.len()).rev() {
            if self.stages[stage].work.is_some() {
                continue;
            }
            if self.stages[stage].buf.len() >= self.config.max_tokens {
                continue; // nothing this stage produces can still be used
            }
            if stage == 0 {
                self.start_own_token(0, now);
            } else {
                self.decide_verifier(stage, now)?;
            }
        }
        Ok(())
    }

    fn start_own_token(&mut self, stage: usize, now: f64) {
        let token = self.models[stage].next_token(self.stages[stage].buf.context());
        self.stages[stage].work = Some(Work::OwnToken { token });
        self.schedule(stage, now + self.latency(stage));
    }

    fn decide_verifier(&mut self, stage: usize, now: f64) -> Result<(), EngineError> {
        let spec = &self.config.stages[stage];
        let window = effective_window(spec);
        let need = min_pending(spec);

        // absorb upstream tokens at positions this stage has already
        // committed; they confirm (or contradict) bonus and fallback tokens
        let diverged = {
            let (low, high) = self.stages.split_at_mut(stage);
            let upstream = &low[stage - 1];
            let st = &mut high[0];
            let mut diverged = false;
            while st.consume < upstream.buf.len() && st.consume < st.buf.len() {
                if upstream.buf.get(st.consume) == st.buf.get(st.consume) {
                    st.consume += 1;
                } else {
                    diverged = true;
                    break;
                }
            }
            diverged
        };
        if diverged {
            // upstream is generating from an invalidated prefix: roll it
            // back now and spend this step on our own next token
            self.apply_rollback(stage, now)?;
            self.start_own_token(stage, now);
            return Ok(());
        }

        let upstream_len = self.stages[stage - 1].buf.len();
        let pending = upstream_len - self.stages[stage].consume;
        if pending == 0 || window == 0 {
            // nothing to verify: never idle, generate our own next token
            self.start_own_token(stage, now);
            return Ok(());
        }
        let upstream_capped = upstream_len >= self.config.max_tokens;
        if pending < need && !upstream_capped {
            return Ok(()); // wait for the lookahead threshold
        }
        let take = pending.min(window);
        let consume = self.stages[stage].consume;
        let batch: Vec<TokenId> =
            self.stages[stage - 1].buf.tokens()[consume..consume + take].to_vec();
        let outcome = compute_verify(&self.stages[stage].buf, &batch, self.models[stage].as_ref());
        self.stages[stage].work = Some(Work::Verify(outcome));
        self.schedule(stage, now + self.latency(stage));
        Ok(())
    }

    fn schedule(&mut self, stage: usize, time: f64) {
        let seq = self.next_sched_seq;
        self.next_sched_seq += 1;
        self.queue.push(Scheduled {
            time,
            stage,
            seq,
            epoch: self.stages[stage].epoch,
        });
    }

    fn into_result(self, total_time: f64) -> RunResult {
        let last = self.config.last_stage();
        let fallback_steps = self.stages[last].own_token_steps;
        let per_stage = self
            .stages
            .iter()
            .map(|st| StageStats {
                busy_time: st.busy_time,
                busy_fraction: if total_time > 0.0 {
                    st.busy_time / total_time
                } else {
                    0.0
                },
                verify_steps: st.verify_steps,
                own_token_steps: st.own_token_steps,
                rollbacks_received: st.rollbacks_received,
                comparisons: st.comparisons,
                accepted: st.accepted,
                verified_upto: st.buf.verified_upto(),
            })
            .collect();
        RunResult {
            config: self.config.clone(),
            final_sequence: self.stages[last].buf.tokens().to_vec(),
            total_time,
            events: self.log.into_events(),
            per_stage,
            accept_histogram: self.histogram,
            fallback_steps,
        }
    }
}
