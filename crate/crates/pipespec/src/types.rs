//! Shared domain types: tokens, per-stage parameters, and pipeline configuration.

use serde::{Deserialize, Serialize};

/// Opaque vocabulary index. Tokens carry no text; the protocol only ever
/// compares them for equality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn value(self) -> u32 {
        self.0
    }
}

impl std::fmt::Display for TokenId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Execution mode for a pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// The final stage generates every token itself; the baseline.
    Autoregressive,
    /// Lockstep draft/verify rounds; stages never overlap in time.
    SpeculativeSync,
    /// Asynchronous pipeline: every stage runs continuously and rejections
    /// trigger rollback cascades.
    PipespecAsync,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Mode::Autoregressive => "autoregressive",
            Mode::SpeculativeSync => "speculative_sync",
            Mode::PipespecAsync => "pipespec_async",
        };
        f.write_str(s)
    }
}

/// Parameters of one pipeline stage.
///
/// Stage 0 is the fastest drafter and never verifies, so its
/// `acceptance_rate` is ignored. For stage i > 0, `acceptance_rate` is the
/// probability that a token drafted by stage i-1 matches stage i's own
/// prediction in the same context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    /// Virtual time units spent per generated token (drafting, one verify
    /// pass over a batch, or one fallback token).
    pub latency_per_token: f64,
    /// Agreement probability with the previous stage, in [0, 1].
    #[serde(default)]
    pub acceptance_rate: f64,
    /// Verify batch cap. `None` means unbounded (take everything pending).
    /// A window of 0 disables verification: the stage behaves
    /// autoregressively.
    #[serde(default)]
    pub window: Option<u32>,
    /// Minimum number of pending draft tokens before a verify pass starts.
    /// In sync mode this is also the number of tokens the upstream stage
    /// drafts per round.
    #[serde(default)]
    pub lookahead: u32,
}

impl StageSpec {
    /// A drafting stage: only the latency matters.
    pub fn drafter(latency_per_token: f64) -> Self {
        StageSpec {
            latency_per_token,
            acceptance_rate: 0.0,
            window: None,
            lookahead: 0,
        }
    }

    /// A verifying stage with the given latency and link acceptance rate.
    pub fn verifier(latency_per_token: f64, acceptance_rate: f64) -> Self {
        StageSpec {
            latency_per_token,
            acceptance_rate,
            window: None,
            lookahead: 0,
        }
    }

    pub fn with_window(mut self, window: u32) -> Self {
        self.window = Some(window);
        self
    }

    pub fn with_lookahead(mut self, lookahead: u32) -> Self {
        self.lookahead = lookahead;
        self
    }
}

/// Default vocabulary size when none is configured.
pub const DEFAULT_VOCAB_SIZE: u32 = 32_768;
/// Default generation cap.
pub const DEFAULT_MAX_TOKENS: usize = 512;

/// Full description of a pipeline run. Identical configs produce bit-exact
/// identical results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Stages ordered fastest-drafter first; the last entry is the final
    /// verifier whose output defines correctness.
    pub stages: Vec<StageSpec>,
    pub vocab_size: u32,
    /// Generation cap: the run stops once the final stage has committed this
    /// many tokens.
    pub max_tokens: usize,
    /// Root of all stochastic behavior. Runs have no other entropy source.
    pub seed: u64,
    pub mode: Mode,
    /// Optional terminator: committing this token at the final stage ends the
    /// run early.
    #[serde(default)]
    pub end_token: Option<TokenId>,
}

impl PipelineConfig {
    pub fn new(stages: Vec<StageSpec>, seed: u64, mode: Mode) -> Self {
        PipelineConfig {
            stages,
            vocab_size: DEFAULT_VOCAB_SIZE,
            max_tokens: DEFAULT_MAX_TOKENS,
            seed,
            mode,
            end_token: None,
        }
    }

    pub fn with_max_tokens(mut self, max_tokens: usize) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn with_vocab_size(mut self, vocab_size: u32) -> Self {
        self.vocab_size = vocab_size;
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    /// Number of stages.
    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// Index of the final verifier.
    pub fn last_stage(&self) -> usize {
        self.stages.len() - 1
    }

    /// Check every stage and config invariant, naming the violated bound.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.stages.is_empty() {
            return Err(ConfigError::new("stages must be non-empty"));
        }
        if self.vocab_size == 0 {
            return Err(ConfigError::new("vocab_size must be positive"));
        }
        if self.max_tokens == 0 {
            return Err(ConfigError::new("max_tokens must be positive"));
        }
        for (i, stage) in self.stages.iter().enumerate() {
            if stage.latency_per_token <= 0.0 || !stage.latency_per_token.is_finite() {
                return Err(ConfigError::new(format!(
                    "stage {i}: latency_per_token must be a positive finite real, got {}",
                    stage.latency_per_token
                )));
            }
            if i > 0 && !(0.0..=1.0).contains(&stage.acceptance_rate) {
                return Err(ConfigError::new(format!(
                    "stage {i}: acceptance_rate must lie in [0, 1], got {}",
                    stage.acceptance_rate
                )));
            }
        }
        if let Some(end) = self.end_token {
            if end.value() >= self.vocab_size {
                return Err(ConfigError::new(format!(
                    "end_token {} must be < vocab_size {}",
                    end, self.vocab_size
                )));
            }
        }
        Ok(())
    }

    /// The same pipeline restricted to its final stage, in autoregressive
    /// mode. This is the baseline whose output every other mode must
    /// reproduce token for token.
    pub fn autoregressive_baseline(&self) -> PipelineConfig {
        let mut cfg = self.clone();
        cfg.mode = Mode::Autoregressive;
        cfg
    }

    /// True when two configs describe the same generation problem (they may
    /// differ only in mode). Used to reject cross-config metric comparisons.
    pub fn same_problem(&self, other: &PipelineConfig) -> bool {
        self.stages == other.stages
            && self.vocab_size == other.vocab_size
            && self.max_tokens == other.max_tokens
            && self.seed == other.seed
            && self.end_token == other.end_token
    }
}

/// Invalid configuration supplied by the caller.
#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
#[error("invalid config: {msg}")]
pub struct ConfigError {
    msg: String,
}

impl ConfigError {
    pub fn new(msg: impl Into<String>) -> Self {
        ConfigError { msg: msg.into() }
    }
}
