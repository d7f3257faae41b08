//! Per-stage token buffer with rollback-to-prefix and O(1) context
//! fingerprints.
//!
//! Each stage owns exactly one [`TokenBuffer`]; all cross-stage reads go
//! through immutable snapshots taken by the engine. Alongside the tokens the
//! buffer maintains a running prefix-hash chain so that models can be a pure
//! function of the context without rehashing it on every call.

use crate::types::TokenId;
use serde::{Deserialize, Serialize};

/// Fingerprint of the empty context.
pub const EMPTY_CONTEXT_HASH: u64 = 0xcbf2_9ce4_8422_2325;

/// Extend a context fingerprint by one token. The chain is a pure fold over
/// token values, so equal token sequences always share a fingerprint,
/// including after rollbacks re-create a previously seen prefix.
pub fn extend_context_hash(hash: u64, token: TokenId) -> u64 {
    let mut h = hash ^ u64::from(token.value()).wrapping_mul(0x100_0000_01b3);
    // splitmix64 finalizer for avalanche
    h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// An immutable view of a generation context: a base prefix owned by some
/// buffer, optionally extended by tokens that are not committed yet (used
/// while a verify pass walks through a draft batch).
#[derive(Debug, Clone, Copy)]
pub struct Context<'a> {
    base: &'a [TokenId],
    ext: &'a [TokenId],
    hash: u64,
}

impl<'a> Context<'a> {
    pub fn empty() -> Context<'static> {
        Context {
            base: &[],
            ext: &[],
            hash: EMPTY_CONTEXT_HASH,
        }
    }

    pub fn len(&self) -> usize {
        self.base.len() + self.ext.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stable fingerprint of the token sequence.
    pub fn fingerprint(&self) -> u64 {
        self.hash
    }

    pub fn get(&self, idx: usize) -> Option<TokenId> {
        if idx < self.base.len() {
            self.base.get(idx).copied()
        } else {
            self.ext.get(idx - self.base.len()).copied()
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.base.iter().chain(self.ext.iter()).copied()
    }

    /// Build a context from scratch, folding the fingerprint over all
    /// tokens. Intended for callers outside the engine (tests, custom
    /// models); the engine itself reuses buffer prefix hashes.
    pub fn compute(tokens: &[TokenId]) -> Context<'_> {
        let mut hash = EMPTY_CONTEXT_HASH;
        for &t in tokens {
            hash = extend_context_hash(hash, t);
        }
        Context {
            base: tokens,
            ext: &[],
            hash,
        }
    }

    /// Assemble a context from a committed base, an uncommitted extension,
    /// and a fingerprint already covering both. The caller is responsible
    /// for hash consistency.
    pub(crate) fn from_parts(base: &'a [TokenId], ext: &'a [TokenId], hash: u64) -> Context<'a> {
        Context { base, ext, hash }
    }
}

/// Violation of a buffer precondition. These indicate an engine bug, never
/// bad user input.
#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
#[error("buffer contract violated: {0}")]
pub struct BufferError(pub String);

/// Append-only token sequence with rollback-to-prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenBuffer {
    tokens: Vec<TokenId>,
    /// hash_chain[p] fingerprints the prefix tokens[0..=p].
    hash_chain: Vec<u64>,
    /// Length of the prefix this stage considers final.
    verified_upto: usize,
}

impl Default for TokenBuffer {
    fn default() -> Self {
        Self::new()
    }
}

impl TokenBuffer {
    pub fn new() -> Self {
        TokenBuffer {
            tokens: Vec::new(),
            hash_chain: Vec::new(),
            verified_upto: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn get(&self, idx: usize) -> Option<TokenId> {
        self.tokens.get(idx).copied()
    }

    pub fn verified_upto(&self) -> usize {
        self.verified_upto
    }

    /// Mark the first `upto` tokens as final. Saturates at the current
    /// length and never moves backwards except through `rollback`.
    pub fn mark_verified(&mut self, upto: usize) {
        self.verified_upto = self.verified_upto.max(upto.min(self.tokens.len()));
    }

    /// Fingerprint of the prefix of the given length.
    pub fn prefix_hash(&self, len: usize) -> u64 {
        if len == 0 {
            EMPTY_CONTEXT_HASH
        } else {
            self.hash_chain[len - 1]
        }
    }

    /// View the whole buffer as a generation context.
    pub fn context(&self) -> Context<'_> {
        Context {
            base: &self.tokens,
            ext: &[],
            hash: self.prefix_hash(self.tokens.len()),
        }
    }

    /// View the first `len` tokens as a generation context.
    pub fn context_prefix(&self, len: usize) -> Context<'_> {
        Context {
            base: &self.tokens[..len],
            ext: &[],
            hash: self.prefix_hash(len),
        }
    }

    /// Append tokens at the end; the existing prefix is untouched.
    pub fn append(&mut self, toks: &[TokenId]) {
        for &t in toks {
            self.push(t);
        }
    }

    pub fn push(&mut self, token: TokenId) {
        let h = extend_context_hash(self.prefix_hash(self.tokens.len()), token);
        self.tokens.push(token);
        self.hash_chain.push(h);
    }

    /// Keep exactly the first `keep` tokens. `keep` beyond the current
    /// length is an engine bug.
    pub fn rollback(&mut self, keep: usize) -> Result<(), BufferError> {
        if keep > self.tokens.len() {
            return Err(BufferError(format!(
                "rollback keep={} exceeds buffer length {}",
                keep,
                self.tokens.len()
            )));
        }
        self.tokens.truncate(keep);
        self.hash_chain.truncate(keep);
        self.verified_upto = self.verified_upto.min(keep);
        Ok(())
    }

    /// Number of leading tokens shared with `other`. Binary-searches the
    /// prefix-hash chains instead of scanning token by token, so resyncing
    /// two long buffers that differ only near the end stays cheap.
    pub fn common_prefix_len(&self, other: &TokenBuffer) -> usize {
        let max = self.len().min(other.len());
        if max == 0 || self.hash_chain[..max] == other.hash_chain[..max] {
            return max;
        }
        let same = |p: usize| p == 0 || self.hash_chain[p - 1] == other.hash_chain[p - 1];
        let mut lo = 0;
        let mut hi = max;
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if same(mid) {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        debug_assert!(lo == max || self.tokens[lo] != other.tokens[lo]);
        lo
    }

    /// Make this buffer an exact copy of `source`, discarding even tokens
    /// that validly extend it. Returns the number discarded.
    pub fn copy_from(&mut self, source: &TokenBuffer) -> Result<usize, BufferError> {
        let common = self.common_prefix_len(source);
        let discarded = self.len() - common;
        self.rollback(common)?;
        self.append(&source.tokens()[common..]);
        Ok(discarded)
    }

    /// Replace this buffer's content with `source`'s, implemented as a
    /// rollback to the common prefix plus appends. If this buffer already
    /// extends `source` token for token the call is a no-op and any extra
    /// tokens survive. Returns the number of tokens discarded.
    pub fn resync_to(&mut self, source: &TokenBuffer) -> Result<usize, BufferError> {
        let common = self.common_prefix_len(source);
        if common == source.len() {
            // already a prefix-extension of the source; nothing to discard
            return Ok(0);
        }
        let discarded = self.len() - common;
        self.rollback(common)?;
        self.append(&source.tokens()[common..]);
        Ok(discarded)
    }
}
