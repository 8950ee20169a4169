// SPDX-License-Identifier: MIT OR Apache-2.0

//! Splittable seeding.
//!
//! Every random draw in the toolkit descends from one 64-bit root seed. A
//! [`SeedTree`] names substreams by string key (`"corpus"`, `"extract"`, ...)
//! and optionally by index, so adding a new stage never perturbs the draws of
//! an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used for every stochastic stage.
pub type StageRng = ChaCha8Rng;

/// A node in the seed hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    seed: u64,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        SeedTree { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive the child node for a named stage.
    pub fn child(&self, key: &str) -> SeedTree {
        SeedTree {
            seed: splitmix64(self.seed ^ splitmix64(fnv1a(key.as_bytes()))),
        }
    }

    /// Derive the child node for the `i`-th item of a stage (e.g. a prompt).
    pub fn index(&self, i: u64) -> SeedTree {
        SeedTree {
            seed: splitmix64(self.seed.wrapping_add(splitmix64(i ^ 0x5851_f42d_4c95_7f2d))),
        }
    }

    /// A generator for this node.
    pub fn rng(&self) -> StageRng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// Shorthand for `self.child(key).rng()`.
    pub fn stream(&self, key: &str) -> StageRng {
        self.child(key).rng()
    }
}
