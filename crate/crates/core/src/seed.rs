//! Stable derivation of independent random streams from a run seed.
//!
//! Streams are keyed by content (dialogue id, turn index, token position)
//! rather than by iteration order, so parallel and serial runs draw the same
//! numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// One component of a stream key.
#[derive(Debug, Clone, Copy)]
pub enum KeyPart<'a> {
    Str(&'a str),
    Int(u64),
}

impl<'a> From<&'a str> for KeyPart<'a> {
    fn from(s: &'a str) -> Self {
        KeyPart::Str(s)
    }
}

impl From<u64> for KeyPart<'_> {
    fn from(v: u64) -> Self {
        KeyPart::Int(v)
    }
}

impl From<usize> for KeyPart<'_> {
    fn from(v: usize) -> Self {
        KeyPart::Int(v as u64)
    }
}

/// Hashes `seed` and `parts` into a 64-bit stream seed.
pub fn derive_seed(seed: u64, parts: &[KeyPart<'_>]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        match p {
            KeyPart::Str(s) => {
                h.update([0u8]);
                h.update((s.len() as u64).to_le_bytes());
                h.update(s.as_bytes());
            }
            KeyPart::Int(v) => {
                h.update([1u8]);
                h.update(v.to_le_bytes());
            }
        }
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("32-byte digest"))
}

pub fn stream(seed: u64, parts: &[KeyPart<'_>]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, parts))
}

/// Per-turn seed used by sampling decoders.
pub fn turn_seed(seed: u64, dialogue_id: &str, turn_index: usize) -> u64 {
    derive_seed(seed, &[dialogue_id.into(), turn_index.into()])
}
