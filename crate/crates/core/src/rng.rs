//! Named-stream seed derivation.
//!
//! Every random draw in a scenario descends from one root seed. Components ask
//! for a stream by name (plus optional indices such as participant id and
//! round) so that changing one component's consumption never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Deterministically mix a base seed with a stream name and index path.
pub fn derive_seed(base: u64, stream: &str, path: &[u64]) -> u64 {
    let mut s = splitmix64(base ^ splitmix64(fnv1a(stream)));
    for &p in path {
        s = splitmix64(s ^ splitmix64(p.wrapping_add(0x5851_F42D_4C95_7F2D)));
    }
    s
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Root of the scenario's seed tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    root: u64,
}

impl SeedStreams {
    pub const DATA: &'static str = "data";
    pub const INIT: &'static str = "init";
    pub const SCHEDULE: &'static str = "schedule";
    pub const DROPOUT: &'static str = "dropout";
    pub const ATTACK: &'static str = "attack";

    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn seed(&self, stream: &str) -> u64 {
        derive_seed(self.root, stream, &[])
    }

    pub fn seed_at(&self, stream: &str, path: &[u64]) -> u64 {
        derive_seed(self.root, stream, path)
    }

    pub fn rng(&self, stream: &str, path: &[u64]) -> SimRng {
        rng_from_seed(self.seed_at(stream, path))
    }
}
