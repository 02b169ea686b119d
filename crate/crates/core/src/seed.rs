//! Deterministic seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator keyed by the
//! global seed plus a label (and optionally a string key and an index), so
//! results do not depend on processing order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with a label, a key and an index into a new 64-bit seed.
pub fn derive(seed: u64, label: &str, key: &str, index: u64) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &seed.to_le_bytes());
    h = fnv1a(h, label.as_bytes());
    h = fnv1a(h, &[0xff]);
    h = fnv1a(h, key.as_bytes());
    h = fnv1a(h, &[0xfe]);
    h = fnv1a(h, &index.to_le_bytes());
    splitmix(h)
}

pub fn stream(seed: u64, label: &str) -> Rng {
    Rng::seed_from_u64(derive(seed, label, "", 0))
}

pub fn substream(seed: u64, label: &str, key: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive(seed, label, key, index))
}
