//! Seed derivation. Every random stream is a pure function of the master
//! seed and a tuple of indices, so scheduling never changes results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream tags keeping independent consumers apart.
pub mod tag {
    pub const CLIENT: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SHARED_SET: u64 = 4;
    pub const WARMUP: u64 = 5;
    pub const SYNTHETIC: u64 = 6;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn derive_seed(master: u64, tag: u64, a: u64, b: u64) -> u64 {
    [tag, a, b]
        .into_iter()
        .fold(splitmix64(master), |h, v| splitmix64(h ^ splitmix64(v)))
}

pub fn stream(master: u64, tag: u64, a: u64, b: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, tag, a, b))
}

/// The stream a client consumes during one round.
pub fn client_stream(master: u64, client: usize, round: usize) -> SimRng {
    stream(master, tag::CLIENT, client as u64, round as u64)
}
