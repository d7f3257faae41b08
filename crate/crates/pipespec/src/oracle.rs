//! Seeded token-generator models with controllable pairwise agreement.
//!
//! The final stage produces a canonical stream that is a pure function of
//! (seed, context). Every earlier stage agrees with the stage above it on a
//! per-context Bernoulli draw keyed by the context fingerprint, so the
//! configured acceptance rate between adjacent stages is realized exactly,
//! reproducibly, and context-sensitively: re-predicting after a rollback
//! that restores an old prefix yields the identical token, while a changed
//! prefix re-rolls the draw.
//!
//! Chaining agreement to the adjacent stage (rather than corrupting a shared
//! ground truth independently per stage) makes stage i agree with the final
//! stage exactly when every link between them agrees, so measured end-to-end
//! acceptance is the product of the per-link rates.

use crate::buffer::Context;
use crate::types::{ConfigError, PipelineConfig, TokenId};
use std::sync::Arc;

/// A token generator the engine can drive. Implementations must be pure
/// functions of the context (plus their own frozen parameters): no hidden
/// state, no call-order dependence.
pub trait Model: Send + Sync {
    fn next_token(&self, ctx: Context<'_>) -> TokenId;
}

const CANONICAL_TAG: u64 = 0x7069_7065_0001;
const LINK_TAG: u64 = 0x7069_7065_0002;
const DECOY_TAG: u64 = 0x7069_7065_0003;

fn mix(a: u64, b: u64) -> u64 {
    let mut h = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Map a hash to [0, 1) with 53 bits of precision.
fn unit_float(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// The canonical next token for a context: deterministic in (seed, context)
/// and uniform over the vocabulary under seed variation.
pub fn canonical_next(seed: u64, vocab_size: u32, ctx: Context<'_>) -> TokenId {
    let h = mix(mix(seed, CANONICAL_TAG), ctx.fingerprint());
    TokenId((h % u64::from(vocab_size)) as u32)
}

/// Shared parameters of one oracle chain.
#[derive(Debug)]
pub struct OracleChain {
    seed: u64,
    vocab_size: u32,
    /// link_agreement[i] is the probability that stage i's token equals
    /// stage i+1's token on the same context.
    link_agreement: Vec<f64>,
}

impl OracleChain {
    pub fn new(seed: u64, vocab_size: u32, link_agreement: Vec<f64>) -> Self {
        OracleChain {
            seed,
            vocab_size,
            link_agreement,
        }
    }

    /// Derive the chain from a pipeline config: the agreement of link i is
    /// stage i+1's acceptance rate.
    pub fn from_config(config: &PipelineConfig) -> Self {
        let link_agreement = config.stages[1..]
            .iter()
            .map(|s| s.acceptance_rate)
            .collect();
        OracleChain::new(config.seed, config.vocab_size, link_agreement)
    }

    /// Number of stages (links + 1).
    pub fn num_stages(&self) -> usize {
        self.link_agreement.len() + 1
    }

    /// Stage `stage_index`'s prediction for a context. Computed by walking
    /// down from the canonical stage through each link's Bernoulli draw; a
    /// disagreeing link yields a token guaranteed unequal to the stage
    /// above.
    pub fn predict(&self, stage_index: usize, ctx: Context<'_>) -> TokenId {
        let mut token = canonical_next(self.seed, self.vocab_size, ctx);
        for link in (stage_index..self.link_agreement.len()).rev() {
            let alpha = self.link_agreement[link];
            let draw = unit_float(mix(
                mix(self.seed, LINK_TAG ^ ((link as u64) << 32)),
                ctx.fingerprint(),
            ));
            if draw < alpha {
                continue;
            }
            token = self.decoy(link, token, ctx);
        }
        token
    }

    /// A deterministic token different from `avoid` (when the vocabulary
    /// permits one).
    fn decoy(&self, link: usize, avoid: TokenId, ctx: Context<'_>) -> TokenId {
        if self.vocab_size <= 1 {
            return avoid;
        }
        let h = mix(
            mix(self.seed, DECOY_TAG ^ ((link as u64) << 32)),
            ctx.fingerprint(),
        );
        let offset = (h % u64::from(self.vocab_size - 1)) as u32;
        TokenId((avoid.value() + 1 + offset) % self.vocab_size)
    }
}

/// One stage's view of an [`OracleChain`], usable as a [`Model`].
#[derive(Debug, Clone)]
pub struct ChainedOracle {
    chain: Arc<OracleChain>,
    stage_index: usize,
}

impl ChainedOracle {
    pub fn new(chain: Arc<OracleChain>, stage_index: usize) -> Self {
        assert!(stage_index < chain.num_stages());
        ChainedOracle { chain, stage_index }
    }

    pub fn stage_index(&self) -> usize {
        self.stage_index
    }
}

impl Model for ChainedOracle {
    fn next_token(&self, ctx: Context<'_>) -> TokenId {
        self.chain.predict(self.stage_index, ctx)
    }
}

/// One model per stage, from the config's seed and acceptance rates.
pub fn oracle_models(config: &PipelineConfig) -> Result<Vec<Box<dyn Model>>, ConfigError> {
    config.validate()?;
    let chain = Arc::new(OracleChain::from_config(config));
    Ok((0..config.num_stages())
        .map(|i| Box::new(ChainedOracle::new(Arc::clone(&chain), i)) as Box<dyn Model>)
        .collect())
}
