//! Seed derivation and per-step random streams.
//!
//! A run owns one 64-bit seed. Each time step draws from its own ChaCha stream
//! (`set_stream(n)`), so the randomness consumed at step `n` never depends on how
//! much was consumed earlier. Replicate seeds are derived from a root seed by
//! hashing an experiment label together with integer identifiers.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

pub type SmcRng = ChaCha12Rng;

/// Derives a child seed from `root`, a label and a list of identifiers.
pub fn derive_seed(root: u64, label: &str, ids: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    for id in ids {
        hasher.update(id.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Random stream for time step `n` of the run seeded by `seed`.
pub fn step_rng(seed: u64, n: usize) -> SmcRng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(n as u64);
    rng
}

/// Stream used for anything outside the per-step sampling (e.g. fresh
/// predictor draws or observation simulation).
pub fn aux_rng(seed: u64, label: &str) -> SmcRng {
    ChaCha12Rng::seed_from_u64(derive_seed(seed, label, &[]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derived_seeds_differ_by_label_and_id() {
        let a = derive_seed(7, "figure2", &[0]);
        assert_eq!(a, derive_seed(7, "figure2", &[0]));
        assert_ne!(a, derive_seed(7, "figure2", &[1]));
        assert_ne!(a, derive_seed(7, "figure1", &[0]));
        assert_ne!(a, derive_seed(8, "figure2", &[0]));
        // label/id boundaries are length-prefixed
        assert_ne!(derive_seed(1, "ab", &[]), derive_seed(1, "a", &[u64::from(b'b')]));
    }

    #[test]
    fn step_streams_are_distinct_and_reproducible() {
        let x: u64 = step_rng(3, 1).random();
        let y: u64 = step_rng(3, 2).random();
        assert_ne!(x, y);
        assert_eq!(x, step_rng(3, 1).random::<u64>());
    }
}
