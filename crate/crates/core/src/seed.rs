//! Seed derivation. Every stochastic choice in a run draws from its own
//! stream, keyed by a fixed label, so any single stream can be replayed
//! without replaying the others.

use alloc::format;
use alloc::string::String;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const DOMAIN: &[u8] = b"herdkit/derive-seed/v1";

/// Keyed 64-bit derivation: the first eight bytes (little endian) of
/// `SHA-256(domain || master_seed_le || label)`.
pub fn derive_seed(master_seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(DOMAIN);
    h.update(master_seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(out)
}

pub fn rng_for(master_seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master_seed, label))
}

pub fn peer_init_label(peer: usize) -> String {
    format!("peer-init-{peer}")
}

pub fn shuffle_label(epoch: usize) -> String {
    format!("data-shuffle-epoch-{epoch}")
}

pub fn role_label(step: u64) -> String {
    format!("role-sample-{step}")
}

pub fn flip_label(step: u64) -> String {
    format!("flip-{step}")
}

pub fn probe_label(kind: &str, step: u64, peer: &str) -> String {
    format!("probe-{kind}-{step}-{peer}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        assert_eq!(derive_seed(42, "peer-init-3"), derive_seed(42, "peer-init-3"));
    }

    #[test]
    fn labels_separate_streams() {
        assert_ne!(derive_seed(42, "peer-init-3"), derive_seed(42, "peer-init-4"));
        assert_ne!(derive_seed(1, "x"), derive_seed(2, "x"));
    }

    #[test]
    fn frozen_value() {
        // Pinned so a change in the derivation (and hence every run) is caught.
        let v = derive_seed(0, "peer-init-0");
        assert_eq!(v, derive_seed(0, &peer_init_label(0)));
        assert_eq!(v, FROZEN_PEER_INIT_0);
    }

    // Independently computed with Python hashlib.
    const FROZEN_PEER_INIT_0: u64 = 7_779_018_855_999_802_994;
}
