//! Lockstep speculative decoding: one stage active at a time.
//!
//! Each round, stage 0 drafts exactly the next verifier's lookahead quota
//! and blocks. Every verifier in turn runs one batch pass over its pending
//! drafts, then generates tokens by itself until the stage above it has its
//! own quota staged (the intermediate stage is both a verifier and the next
//! round's drafter). After the final stage's pass, every buffer
//! resynchronizes to the final stage's content; discarded speculation counts
//! as a rollback. With two stages this is the classic alternating
//! draft/verify schedule, and its measured speedup matches the closed-form
//! expectation: the geometric sum divided by the draft-wait plus one.

use super::{
    commit_final, compute_verify, effective_window, min_pending, EngineError, EventKind,
    EventLogBuilder, RunResult, StageStats,
};
use crate::buffer::TokenBuffer;
use crate::oracle::Model;
use crate::types::{PipelineConfig, TokenId};
use std::collections::BTreeMap;

/// Round size when a verifier sets neither a lookahead nor a finite window.
const DEFAULT_SYNC_ROUND: usize = 8;

#[derive(Debug, Default)]
struct Counters {
    busy_time: f64,
    verify_steps: u64,
    own_token_steps: u64,
    rollbacks_received: u64,
    comparisons: u64,
    accepted: u64,
}

pub(crate) fn run_sync(
    config: &PipelineConfig,
    models: &[Box<dyn Model>],
) -> Result<RunResult, EngineError> {
    if config.num_stages() == 1 {
        // a single stage has nothing to speculate against
        return super::run_autoregressive(config, models);
    }
    let last = config.last_stage();
    let mut bufs: Vec<TokenBuffer> = (0..config.num_stages())
        .map(|_| TokenBuffer::new())
        .collect();
    let mut counters: Vec<Counters> = (0..config.num_stages())
        .map(|_| Counters::default())
        .collect();
    let mut log = EventLogBuilder::default();
    let mut histogram: BTreeMap<u32, u64> = BTreeMap::new();
    let mut time = 0.0;
    let mut finished = false;

    // How many tokens stage i-1 must stage before stage i runs: the
    // lookahead, with a finite window standing in when the lookahead is 0
    // (waiting for less than a batch would waste the round), and a round of
    // 8 when neither is set.
    let quota = |stage: usize| -> usize {
        let spec = &config.stages[stage];
        let window = effective_window(spec);
        if window == 0 {
            0
        } else if spec.lookahead > 0 {
            min_pending(spec)
        } else if window != usize::MAX {
            window
        } else {
            DEFAULT_SYNC_ROUND
        }
    };

    while !finished {
        let round_start = bufs[last].len();

        // stage 0 drafts the first verifier's quota, then blocks
        let draft_target = (round_start + quota(1)).min(config.max_tokens);
        while bufs[0].len() < draft_target {
            let token = models[0].next_token(bufs[0].context());
            time += config.stages[0].latency_per_token;
            bufs[0].push(token);
            counters[0].busy_time += config.stages[0].latency_per_token;
            counters[0].own_token_steps += 1;
            log.emit(
                time,
                0,
                EventKind::DraftDone {
                    position: bufs[0].len() - 1,
                    token,
                },
            );
        }

        for stage in 1..=last {
            let latency = config.stages[stage].latency_per_token;
            let window = effective_window(&config.stages[stage]);
            let pending = bufs[stage - 1].len() - bufs[stage].len();

            if window == 0 || pending == 0 {
                // nothing usable to verify: one autoregressive token
                let token = models[stage].next_token(bufs[stage].context());
                time += latency;
                counters[stage].busy_time += latency;
                counters[stage].own_token_steps += 1;
                if stage == last {
                    let (_, fin) = commit_final(&mut bufs[stage], &[token], config);
                    finished = fin;
                } else {
                    bufs[stage].push(token);
                }
                log.emit(
                    time,
                    stage,
                    EventKind::DraftDone {
                        position: bufs[stage].len() - 1,
                        token,
                    },
                );
            } else {
                let take = pending.min(window);
                let from = bufs[stage].len();
                let batch: Vec<TokenId> = bufs[stage - 1].tokens()[from..from + take].to_vec();
                let outcome = compute_verify(&bufs[stage], &batch, models[stage].as_ref());
                time += latency;
                counters[stage].busy_time += latency;
                counters[stage].verify_steps += 1;
                counters[stage].comparisons += outcome.comparisons;
                counters[stage].accepted += outcome.accepted as u64;
                let appended_at = bufs[stage].len();
                let appended = if stage == last {
                    let (n, fin) = commit_final(&mut bufs[stage], &outcome.appended, config);
                    finished = fin;
                    *histogram.entry(n as u32).or_insert(0) += 1;
                    outcome.appended[..n].to_vec()
                } else {
                    bufs[stage].append(&outcome.appended);
                    outcome.appended.clone()
                };
                log.emit(
                    time,
                    stage,
                    EventKind::VerifyDone {
                        consumed: outcome.consumed,
                        accepted: outcome.accepted,
                        appended_at,
                        appended,
                        full_accept: outcome.full_accept,
                    },
                );
            }
            if stage == last {
                let len = bufs[stage].len();
                bufs[stage].mark_verified(len);
                break;
            }

            // stage acts as the next drafter: top up the next quota itself
            let target = (round_start + quota(stage + 1)).min(config.max_tokens);
            while bufs[stage].len() < target {
                let token = models[stage].next_token(bufs[stage].context());
                time += latency;
                bufs[stage].push(token);
                counters[stage].busy_time += latency;
                counters[stage].own_token_steps += 1;
                log.emit(
                    time,
                    stage,
                    EventKind::DraftDone {
                        position: bufs[stage].len() - 1,
                        token,
                    },
                );
            }
        }

        // lockstep resync: every stage restarts from the final content
        let keep = bufs[last].len();
        for stage in (0..last).rev() {
            let (low, high) = bufs.split_at_mut(last);
            let before = low[stage].len();
            let discarded = low[stage].copy_from(&high[0])?;
            let changed = discarded > 0 || before < keep;
            if changed {
                low[stage].mark_verified(keep);
                counters[stage].rollbacks_received += u64::from(discarded > 0);
                log.emit(
                    time,
                    stage,
                    EventKind::RollbackApplied {
                        keep,
                        origin: last,
                        discarded,
                    },
                );
            }
        }
    }

    log.emit(
        time,
        last,
        EventKind::Finished {
            total_tokens: bufs[last].len(),
        },
    );
    let per_stage = counters
        .iter()
        .zip(&bufs)
        .map(|(c, b)| StageStats {
            busy_time: c.busy_time,
            busy_fraction: if time > 0.0 { c.busy_time / time } else { 0.0 },
            verify_steps: c.verify_steps,
            own_token_steps: c.own_token_steps,
            rollbacks_received: c.rollbacks_received,
            comparisons: c.comparisons,
            accepted: c.accepted,
            verified_upto: b.verified_upto(),
        })
        .collect();
    let fallback_steps = counters[last].own_token_steps;
    Ok(RunResult {
        config: config.clone(),
        final_sequence: bufs[last].tokens().to_vec(),
        total_time: time,
        events: log.into_events(),
        per_stage,
        accept_histogram: histogram,
        fallback_steps,
    })
}
