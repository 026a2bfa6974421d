//! Deterministic RNG streams derived from a base seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream `stream` of base seed `seed`.
pub fn stream(seed: u64, stream: u64) -> SimRng {
    SimRng::seed_from_u64(splitmix64(seed ^ splitmix64(stream.wrapping_add(0x5EED))))
}

/// Named streams used across the simulator.
pub mod streams {
    pub const SHADOWING: u64 = 1;
    pub const PLACEMENT: u64 = 2;
    pub const TRANSPORT: u64 = 3;
    pub const SME_BASE: u64 = 1000;
    pub const LINK_BASE: u64 = 2000;
}
