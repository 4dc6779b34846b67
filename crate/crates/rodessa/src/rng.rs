//! Deterministic seed derivation.
//!
//! Sub-seeds are derived with FNV-1a over a canonical byte encoding, so any
//! single replication of a study or calibration is reproducible in isolation
//! and results do not depend on execution order or thread count. The hash is
//! part of the output contract: do not swap it for `DefaultHasher`, whose
//! output may change between compiler releases.

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(hash: &mut u64, bytes: &[u8]) {
    for &b in bytes {
        *hash ^= u64::from(b);
        *hash = hash.wrapping_mul(FNV_PRIME);
    }
}

/// Derive a sub-seed from a base seed, a label, and a list of indices.
pub fn derive_seed(base: u64, label: &str, indices: &[u64]) -> u64 {
    let mut hash = FNV_OFFSET;
    fnv1a(&mut hash, &base.to_le_bytes());
    fnv1a(&mut hash, label.as_bytes());
    for &idx in indices {
        fnv1a(&mut hash, &idx.to_le_bytes());
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_sensitive() {
        // Frozen value: the derivation is part of the reproducibility
        // contract across releases.
        assert_eq!(derive_seed(42, "cell", &[1, 2]), 0x9dc2dbde623eb8f0);
        assert_ne!(derive_seed(42, "cell", &[1, 2]), derive_seed(42, "cell", &[2, 1]));
        assert_ne!(derive_seed(42, "cell", &[1]), derive_seed(43, "cell", &[1]));
        assert_ne!(derive_seed(42, "cell", &[1]), derive_seed(42, "case", &[1]));
    }
}
