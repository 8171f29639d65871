//! Seed derivation.
//!
//! Every random stream in the crate is keyed by the single user seed plus a
//! fixed label, so adding a new consumer never perturbs existing streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a child seed as the first 8 bytes (little endian) of
/// `SHA-256("<root>/<label>")`.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let digest = Sha256::digest(format!("{root}/{label}").as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng_for(root: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, label))
}
