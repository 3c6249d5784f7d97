//! Deterministic random streams.
//!
//! Every consumer of randomness (initialization, shuffling, dropout masks,
//! augmentation) draws from its own ChaCha stream whose seed is a pure function
//! of the run seed, a purpose tag and a tuple of coordinates such as
//! `(epoch, step, row)`. Streams never depend on the order in which other
//! streams were consumed, so pipelined and sequential execution agree.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Purpose tags; the discriminant is mixed into the derived seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Init = 1,
    ShuffleLabeled = 2,
    ShuffleUnlabeled = 3,
    Dropout = 4,
    Augment = 5,
    Synth = 6,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive a stream for `(seed, purpose, coords...)`.
pub fn stream(seed: u64, purpose: Purpose, coords: &[u64]) -> Stream {
    let mut h = splitmix64(seed ^ (purpose as u64).rotate_left(56));
    for &c in coords {
        h = splitmix64(h ^ c);
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// 64-bit FNV-1a, used to turn string ids into stream coordinates and to
/// fingerprint architecture strings.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
