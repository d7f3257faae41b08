//! Wall-clock concurrent execution: one OS thread per stage, draft tokens
//! flowing forward over channels and resync signals flowing backward, with
//! no shared mutable state.
//!
//! This mode exercises the coordination protocol itself rather than the
//! timing model: threads run as fast as they can, so throughput numbers are
//! meaningless and the event-log determinism guarantee does not apply. What
//! must still hold, and what tests check, is losslessness: the final
//! stage's output equals its autoregressive stream no matter how messages
//! interleave, because a stage only ever commits its own predictions.
//!
//! Stale messages are handled with generation stamps: a stage bumps its
//! expected generation whenever it resyncs its upstream neighbor, and drops
//! any draft batch stamped with an older generation.

use super::{commit_final, compute_verify, EngineError};
use crate::buffer::TokenBuffer;
use crate::oracle::Model;
use crate::types::{ConfigError, PipelineConfig, TokenId};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::time::Duration;

struct DraftMsg {
    generation: u64,
    start: usize,
    tokens: Vec<TokenId>,
}

struct ResyncMsg {
    generation: u64,
    content: Vec<TokenId>,
}

const RECV_TICK: Duration = Duration::from_micros(200);
/// Consecutive empty polls after which the final stage generates a token
/// itself instead of waiting for drafts that may never come.
const STARVATION_POLLS: u32 = 64;

/// Run the pipeline with real threads. Returns the final stage's committed
/// sequence.
pub fn run_concurrent(
    config: &PipelineConfig,
    models: &[Box<dyn Model>],
) -> Result<Vec<TokenId>, EngineError> {
    config.validate()?;
    if models.len() != config.num_stages() {
        return Err(ConfigError::new(format!(
            "model count {} does not match stage count {}",
            models.len(),
            config.num_stages()
        ))
        .into());
    }
    let n = config.num_stages();
    if n == 1 {
        let mut buf = TokenBuffer::new();
        loop {
            let token = models[0].next_token(buf.context());
            let (_, finished) = commit_final(&mut buf, &[token], config);
            if finished {
                return Ok(buf.tokens().to_vec());
            }
        }
    }

    // draft channel i carries stage i's tokens forward to stage i+1;
    // resync channel i carries stage i+1's buffer back to stage i
    let mut draft_txs = Vec::new();
    let mut draft_rxs = Vec::new();
    let mut resync_txs = Vec::new();
    let mut resync_rxs = Vec::new();
    for _ in 0..n - 1 {
        let (dtx, drx) = mpsc::channel::<DraftMsg>();
        let (rtx, rrx) = mpsc::channel::<ResyncMsg>();
        draft_txs.push(dtx);
        draft_rxs.push(drx);
        resync_txs.push(rtx);
        resync_rxs.push(rrx);
    }
    let shutdown = AtomicBool::new(false);

    std::thread::scope(|scope| {
        let shutdown = &shutdown;

        // stage 0: pure drafter
        {
            let draft_tx = draft_txs[0].clone();
            let resync_rx = resync_rxs.remove(0);
            let model = &models[0];
            let max_tokens = config.max_tokens;
            scope.spawn(move || {
                let mut buf = TokenBuffer::new();
                let mut generation = 0u64;
                while !shutdown.load(Ordering::Relaxed) {
                    while let Ok(msg) = resync_rx.try_recv() {
                        let mut src = TokenBuffer::new();
                        src.append(&msg.content);
                        let _ = buf.copy_from(&src);
                        generation = msg.generation;
                    }
                    if buf.len() >= max_tokens {
                        std::thread::sleep(RECV_TICK);
                        continue;
                    }
                    let token = model.next_token(buf.context());
                    buf.push(token);
                    let _ = draft_tx.send(DraftMsg {
                        generation,
                        start: buf.len() - 1,
                        tokens: vec![token],
                    });
                }
            });
        }

        // intermediate verifiers
        for stage in 1..n - 1 {
            let draft_rx = draft_rxs.remove(0);
            let forward_tx = draft_txs[stage].clone();
            let backward_tx = resync_txs[stage - 1].clone();
            let resync_rx = resync_rxs.remove(0);
            let model = &models[stage];
            let window = super::effective_window(&config.stages[stage]);
            scope.spawn(move || {
                let mut worker = VerifierState::new();
                while !shutdown.load(Ordering::Relaxed) {
                    worker.absorb_resyncs(&resync_rx, &backward_tx);
                    worker.absorb_drafts(&draft_rx);
                    match worker.plan(window) {
                        Plan::Verify(batch) => {
                            let outcome = compute_verify(&worker.buf, &batch, model.as_ref());
                            let start = worker.buf.len();
                            worker.buf.append(&outcome.appended);
                            let _ = forward_tx.send(DraftMsg {
                                generation: worker.forward_generation,
                                start,
                                tokens: outcome.appended.clone(),
                            });
                            if outcome.full_accept {
                                worker.consume += outcome.consumed;
                            } else {
                                worker.resync_upstream(&backward_tx);
                            }
                        }
                        Plan::Diverged => worker.resync_upstream(&backward_tx),
                        Plan::Starved => std::thread::sleep(RECV_TICK),
                    }
                }
            });
        }

        // final verifier commits and decides when the run is over
        let final_sequence = {
            let draft_rx = draft_rxs.remove(0);
            let backward_tx = resync_txs[n - 2].clone();
            let model = &models[n - 1];
            let window = super::effective_window(&config.stages[n - 1]);
            let handle = scope.spawn(move || {
                let mut worker = VerifierState::new();
                let mut empty_polls = 0u32;
                loop {
                    worker.absorb_drafts(&draft_rx);
                    let plan = worker.plan(window);
                    match plan {
                        Plan::Verify(batch) => {
                            empty_polls = 0;
                            let outcome = compute_verify(&worker.buf, &batch, model.as_ref());
                            let (_, finished) =
                                commit_final(&mut worker.buf, &outcome.appended, config);
                            if outcome.full_accept {
                                worker.consume += outcome.consumed;
                            } else {
                                worker.resync_upstream(&backward_tx);
                            }
                            if finished {
                                break;
                            }
                        }
                        Plan::Diverged => {
                            empty_polls = 0;
                            worker.resync_upstream(&backward_tx);
                        }
                        Plan::Starved => {
                            empty_polls += 1;
                            if empty_polls >= STARVATION_POLLS {
                                // drafts stopped arriving: make progress alone
                                let token = model.next_token(worker.buf.context());
                                let (_, finished) = commit_final(&mut worker.buf, &[token], config);
                                if finished {
                                    break;
                                }
                            } else {
                                std::thread::sleep(RECV_TICK);
                            }
                        }
                    }
                }
                shutdown.store(true, Ordering::Relaxed);
                worker.buf.tokens().to_vec()
            });
            handle
                .join()
                .map_err(|_| EngineError::Fault("final-stage worker panicked".into()))?
        };
        Ok(final_sequence)
    })
}

enum Plan {
    Verify(Vec<TokenId>),
    Diverged,
    Starved,
}

struct VerifierState {
    buf: TokenBuffer,
    upstream: TokenBuffer,
    consume: usize,
    /// Generation this stage expects on incoming drafts.
    expected_generation: u64,
    /// Generation this stage stamps on tokens it forwards.
    forward_generation: u64,
}

impl VerifierState {
    fn new() -> Self {
        VerifierState {
            buf: TokenBuffer::new(),
            upstream: TokenBuffer::new(),
            consume: 0,
            expected_generation: 0,
            forward_generation: 0,
        }
    }

    /// Apply resyncs arriving from the stage above, then propagate our new
    /// content to the stage below.
    fn absorb_resyncs(
        &mut self,
        rx: &mpsc::Receiver<ResyncMsg>,
        backward: &mpsc::Sender<ResyncMsg>,
    ) {
        let mut applied = false;
        while let Ok(msg) = rx.try_recv() {
            let mut src = TokenBuffer::new();
            src.append(&msg.content);
            let _ = self.buf.copy_from(&src);
            self.forward_generation = msg.generation;
            applied = true;
        }
        if applied {
            self.resync_upstream(backward);
        }
    }

    fn absorb_drafts(&mut self, rx: &mpsc::Receiver<DraftMsg>) {
        while let Ok(msg) = rx.try_recv() {
            if msg.generation != self.expected_generation {
                continue; // pre-rollback leftovers
            }
            if msg.start != self.upstream.len() {
                continue;
            }
            self.upstream.append(&msg.tokens);
        }
    }

    /// Roll the upstream stage back to our content and reset our mirror.
    fn resync_upstream(&mut self, backward: &mpsc::Sender<ResyncMsg>) {
        self.expected_generation += 1;
        let _ = backward.send(ResyncMsg {
            generation: self.expected_generation,
            content: self.buf.tokens().to_vec(),
        });
        let _ = self.upstream.copy_from(&self.buf);
        self.consume = self.buf.len();
    }

    fn plan(&mut self, window: usize) -> Plan {
        while self.consume < self.upstream.len() && self.consume < self.buf.len() {
            if self.upstream.get(self.consume) == self.buf.get(self.consume) {
                self.consume += 1;
            } else {
                return Plan::Diverged;
            }
        }
        let pending = self.upstream.len() - self.consume;
        if pending == 0 || window == 0 {
            return Plan::Starved;
        }
        let take = pending.min(window);
        Plan::Verify(self.upstream.tokens()[self.consume..self.consume + take].to_vec())
    }
}
