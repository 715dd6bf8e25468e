//! Seed derivation. Every random stream in the crate is keyed off one root
//! seed plus a component name, so adding a new consumer never shifts the
//! streams of existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable across platforms and compiler versions.
pub fn derive_seed(root: u64, component: &str) -> u64 {
    splitmix64(root ^ fnv1a(component.as_bytes()))
}

pub fn derive_indexed(root: u64, component: &str, index: u64) -> u64 {
    splitmix64(derive_seed(root, component) ^ splitmix64(index))
}

pub fn rng_for(root: u64, component: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, component))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(7, "init"), derive_seed(7, "init"));
        assert_ne!(derive_seed(7, "init"), derive_seed(7, "split"));
        assert_ne!(derive_seed(7, "init"), derive_seed(8, "init"));
        assert_ne!(derive_indexed(7, "shuffle", 0), derive_indexed(7, "shuffle", 1));
        // pinned so a refactor cannot silently change every stream
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }
}
