//! Named random streams derived from a single run seed.
//!
//! Each pipeline stage (initialization, cropping, augmentation, shuffling)
//! draws from its own stream, so a stage's randomness does not depend on how
//! much randomness earlier stages consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Splits one seed into independent, reproducible named streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    seed: u64,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Seed of the stream `name`.
    pub fn derive_seed(&self, name: &str) -> u64 {
        splitmix(self.seed ^ splitmix(fnv1a(name.as_bytes())))
    }

    pub fn stream(&self, name: &str) -> StreamRng {
        StreamRng::seed_from_u64(self.derive_seed(name))
    }

    /// Stream `name` indexed by a counter such as an epoch or step.
    pub fn indexed(&self, name: &str, index: u64) -> StreamRng {
        StreamRng::seed_from_u64(splitmix(self.derive_seed(name) ^ splitmix(index)))
    }

    /// A child splitter, for stages that split further.
    pub fn child(&self, name: &str) -> SeedStreams {
        SeedStreams::new(self.derive_seed(name))
    }
}
