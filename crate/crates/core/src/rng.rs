//! Labelled, replayable random streams.
//!
//! A stream is keyed by `(seed, label)`: the pair is hashed with SHA-256 and
//! the digest seeds a ChaCha20 generator. Streams never share state, so any
//! client/round/step stream can be re-derived on its own.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    label: String,
    inner: ChaCha20Rng,
}

/// Derive the stream for `(seed, label)`. The label must be nonempty.
pub fn derive_stream(seed: u64, label: &str) -> Result<RngStream> {
    if label.is_empty() {
        return Err(Error::invalid("rng stream label must be nonempty"));
    }
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    Ok(RngStream {
        seed,
        label: label.to_owned(),
        inner: ChaCha20Rng::from_seed(digest),
    })
}

impl RngStream {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Fresh stream labelled `"{self.label}/{suffix}"` under the same seed.
    pub fn child(&self, suffix: &str) -> RngStream {
        derive_stream(self.seed, &format!("{}/{}", self.label, suffix))
            .expect("parent label is nonempty")
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
