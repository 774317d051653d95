//! Named random streams derived from one master seed.
//!
//! Every consumer of randomness asks for its own stream by name, so turning a
//! component on or off never shifts the numbers another component sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream names used by the planner and the harness.
pub mod streams {
    pub const BANDIT: &str = "bandit";
    pub const VAE_INIT: &str = "vae-init";
    pub const VAE_NOISE: &str = "vae-noise";
    pub const DATASET: &str = "dataset";
    pub const EVAL: &str = "eval";
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A splittable seed. `child` derives an independent seed from a label;
/// `rng` turns the seed into a generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream(u64);

impl SeedStream {
    pub fn new(master: u64) -> Self {
        SeedStream(splitmix64(master))
    }

    pub fn seed(self) -> u64 {
        self.0
    }

    pub fn child(self, name: &str) -> Self {
        SeedStream(splitmix64(self.0 ^ fnv1a(name.as_bytes())))
    }

    pub fn index(self, i: u64) -> Self {
        SeedStream(splitmix64(self.0.wrapping_add(splitmix64(i ^ 0x5851_f42d_4c95_7f2d))))
    }

    pub fn rng(self, name: &str) -> StreamRng {
        StreamRng::seed_from_u64(self.child(name).0)
    }
}
