//! Seed plumbing. Every random quantity in the crate is drawn from a ChaCha8
//! stream selected by an explicit `(seed, stream)` pair, so any sub-computation
//! can be replayed in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Derives a child seed for a named purpose, e.g. `derive(seed, b"mask")`.
pub fn derive(seed: u64, purpose: &[u8]) -> u64 {
    // FNV-1a over the purpose tag, folded into the seed with a splitmix64
    // finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in purpose {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
