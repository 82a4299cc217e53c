//! Seed derivation for deterministic, order-independent substreams.
//!
//! Every random decision in the crate draws from a ChaCha8 stream whose seed
//! is derived from a root seed plus a purpose label (and optional indices).
//! Substreams are independent of each other and of consumption order, so
//! e.g. regenerating sample 17 alone yields the same bytes as generating the
//! whole corpus.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a 32-byte ChaCha8 seed from a root seed, a label, and indices.
pub fn derive_seed(root: u64, label: &str, indices: &[u64]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update([label.len() as u8]);
    h.update(label.as_bytes());
    for ix in indices {
        h.update(ix.to_le_bytes());
    }
    h.finalize().into()
}

/// A reproducible substream identified by `(root, label, indices)`.
pub fn stream(root: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(root, label, indices))
}
