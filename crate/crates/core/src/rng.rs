//! Counter-based random streams.
//!
//! Every random draw in the toolkit comes from a ChaCha8 generator keyed by a
//! 64-bit seed and a 64-bit stream id. Stream ids are derived from a name and
//! a list of indices, so independent components (data, init, batch, degrade)
//! never share a stream and any draw can be reproduced without replaying the
//! draws that came before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use rand::Rng;

pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_name(name: &str) -> u64 {
    // FNV-1a, then mixed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix64(h)
}

/// A named position in the stream space of one global seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    seed: u64,
    stream: u64,
}

impl StreamKey {
    pub fn new(seed: u64, name: &str) -> Self {
        StreamKey {
            seed,
            stream: hash_name(name),
        }
    }

    pub fn raw(seed: u64, stream: u64) -> Self {
        StreamKey { seed, stream }
    }

    /// Derive a child key; `k.child(a).child(b)` differs from `k.child(b).child(a)`.
    #[must_use]
    pub fn child(self, index: u64) -> Self {
        StreamKey {
            seed: self.seed,
            stream: mix64(self.stream ^ mix64(index.wrapping_add(GOLDEN))),
        }
    }

    #[must_use]
    pub fn named(self, name: &str) -> Self {
        self.child(hash_name(name))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Derive a plain 64-bit seed (for recording in manifests).
    pub fn derive_seed(&self) -> u64 {
        mix64(self.seed ^ mix64(self.stream))
    }
}
