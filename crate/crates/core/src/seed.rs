//! Deterministic seed derivation.
//!
//! Every random stream in a run is a child of one master seed, keyed by a
//! purpose string and an index. Children do not depend on scheduling order,
//! so parallel tasks stay reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable hash of `(master, purpose, index)`; FNV-1a over the bytes followed
/// by a splitmix64 finalizer.
pub fn derive_seed(master: u64, purpose: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |b: u8| {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    };
    master.to_le_bytes().iter().for_each(|&b| eat(b));
    purpose.bytes().for_each(&mut eat);
    eat(0xff);
    index.to_le_bytes().iter().for_each(|&b| eat(b));
    splitmix64(h)
}

pub fn rng_from(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn child_rng(master: u64, purpose: &str, index: u64) -> Rng {
    rng_from(derive_seed(master, purpose, index))
}
