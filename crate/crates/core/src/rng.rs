//! Named, independent random streams derived from a master seed.
//!
//! A stream is identified by `(master, label, index)` and seeded from the
//! SHA-256 digest of that triple, so consumers never share state and
//! results do not depend on the order in which streams are created.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn stream_seed(master: u64, label: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    h.finalize().into()
}

pub fn stream(master: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(stream_seed(master, label, index))
}

/// A 64-bit seed for APIs that take one.
pub fn derive_u64(master: u64, label: &str, index: u64) -> u64 {
    let s = stream_seed(master, label, index);
    u64::from_le_bytes(s[..8].try_into().expect("digest has 32 bytes"))
}
