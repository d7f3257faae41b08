//! Hierarchical pipelined speculative decoding at desk scale.
//!
//! A pipeline is an ordered list of stages, fastest drafter first, largest
//! verifier last. Stages propose tokens for the stage above them; verifiers
//! accept exact matches against their own predictions, append a correction
//! token at the first mismatch, and a bonus token after a fully accepted
//! batch. Rejections roll every earlier stage back to the rejecting stage's
//! content. Because a stage only ever commits its own predictions, the
//! final output is always identical to the last stage's autoregressive
//! stream: speculation moves time, never tokens.
//!
//! The crate provides:
//!
//! * [`analytic`]: the closed-form throughput model (steady-state
//!   verification probability, expected tokens per step, pipeline and
//!   lockstep speedups);
//! * [`oracle`]: seeded token generators realizing configured acceptance
//!   rates exactly, so theory can be checked without real models;
//! * [`engine`]: a deterministic discrete-event simulator for
//!   autoregressive, lockstep, and asynchronous pipelined execution, plus
//!   event-log replay and an optional multi-threaded protocol checker;
//! * [`metrics`]: throughput/utilization summaries and parameter sweeps;
//! * [`trace`]: trace-driven models replaying recorded token streams.

pub mod analytic;
pub mod buffer;
pub mod engine;
pub mod metrics;
pub mod oracle;
pub mod trace;
pub mod types;

pub use buffer::{Context, TokenBuffer};
pub use engine::{run, run_with_oracles, Event, EventKind, EventLog, RunResult};
pub use types::{Mode, PipelineConfig, StageSpec, TokenId};
