//! Splittable deterministic seeds.
//!
//! Every random draw in the simulator comes from a [`Seed`] derived from the
//! experiment seed through a chain of tags (`round`, `client id`, ...). Two
//! streams with different tag paths are statistically independent, and adding
//! a new consumer never shifts the draws of an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used throughout the crate.
pub type SimRng = ChaCha8Rng;

/// A 64-bit seed that can be split into labelled child seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Seed(pub u64);

// Stream labels. Arbitrary distinct constants.
pub(crate) const TAG_DATA: u64 = 0x6461_7461;
pub(crate) const TAG_PARTITION: u64 = 0x7061_7274;
pub(crate) const TAG_INIT: u64 = 0x696e_6974;
pub(crate) const TAG_ROUND: u64 = 0x726f_756e;
pub(crate) const TAG_SAMPLE: u64 = 0x7361_6d70;
pub(crate) const TAG_CLIENT: u64 = 0x636c_6e74;
pub(crate) const TAG_SERVER: u64 = 0x7372_7672;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Seed {
    /// Child seed for `tag`. Deterministic, and distinct tags give unrelated seeds.
    pub fn child(self, tag: u64) -> Seed {
        Seed(splitmix64(splitmix64(self.0) ^ splitmix64(tag.wrapping_add(0xA076_1D64_78BD_642F))))
    }

    pub fn rng(self) -> SimRng {
        SimRng::seed_from_u64(self.0)
    }
}

impl From<u64> for Seed {
    fn from(v: u64) -> Self {
        Seed(v)
    }
}
