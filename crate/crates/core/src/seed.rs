//! Stable seed derivation.
//!
//! Seeds for per-utterance and per-layer random streams must not depend on
//! the platform hasher, so they are derived with FNV-1a and splitmix64.

/// One round of the splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives a seed from a global seed and a string key (e.g. an utterance id).
pub fn derive_seed(global: u64, key: &str) -> u64 {
    splitmix64(global ^ splitmix64(fnv1a(key.as_bytes())))
}

/// Derives a seed from a global seed and a tuple of integer coordinates.
pub fn derive_seed_n(global: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(global), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(7, "utt1"), derive_seed(7, "utt1"));
        assert_ne!(derive_seed(7, "utt1"), derive_seed(7, "utt2"));
        assert_ne!(derive_seed(7, "utt1"), derive_seed(8, "utt1"));
        assert_ne!(derive_seed_n(1, &[0, 1]), derive_seed_n(1, &[1, 0]));
    }
}
