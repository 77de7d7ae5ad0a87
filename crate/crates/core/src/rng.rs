//! Named, counter-addressed random substreams.
//!
//! Every stochastic choice draws from `substream(seed, name, index)`, so a
//! resumed run reproduces the same draws without persisting generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn substream(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a64(name.as_bytes()).to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..].copy_from_slice(&(name.len() as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn substreams_are_reproducible_and_distinct() {
        let a: u64 = substream(1, "pixels", 3).gen();
        assert_eq!(a, substream(1, "pixels", 3).gen::<u64>());
        assert_ne!(a, substream(1, "pixels", 4).gen::<u64>());
        assert_ne!(a, substream(1, "omega", 3).gen::<u64>());
        assert_ne!(a, substream(2, "pixels", 3).gen::<u64>());
    }
}
