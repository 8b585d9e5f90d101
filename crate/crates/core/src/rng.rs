//! Reproducible random streams.
//!
//! Every random draw in the crate comes from a [`Stream`], which is a ChaCha8
//! generator addressed by `(root seed, label, index)`:
//!
//! * the 256-bit ChaCha key is four successive SplitMix64 outputs of the root
//!   seed, each written little-endian;
//! * the 64-bit ChaCha stream id is `mix64(fnv1a64(label) ^ mix64(index))`,
//!   where `mix64` is the SplitMix64 output finalizer.
//!
//! Streams with different labels or indices share the key but never overlap,
//! so any implementation of ChaCha8 with a settable stream id reproduces them.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// SplitMix64 generator, used only for key expansion.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Root of a tree of independent streams.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedTree {
    root: u64,
    key: [u8; 32],
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        let mut sm = SplitMix64::new(root);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&sm.next_u64().to_le_bytes());
        }
        Self { root, key }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn stream_id(label: &str, index: u64) -> u64 {
        mix64(fnv1a64(label.as_bytes()) ^ mix64(index))
    }

    pub fn stream(&self, label: &str, index: u64) -> Stream {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(Self::stream_id(label, index));
        rng
    }

    /// A subtree whose root is the first output of `stream(label, index)`.
    pub fn child(&self, label: &str, index: u64) -> SeedTree {
        SeedTree::new(self.stream(label, index).next_u64())
    }
}

/// One stream per stage label, each at index 0.
pub fn seed_hierarchy(root: u64, labels: &[&str]) -> Vec<Stream> {
    let tree = SeedTree::new(root);
    labels.iter().map(|l| tree.stream(l, 0)).collect()
}
