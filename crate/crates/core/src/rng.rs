//! Counter-based random substreams.
//!
//! Every Monte-Carlo draw is tied to a `(master seed, stream, step)` triple.
//! The triple is hashed into a key and the substream emits
//! `mix(key + k * GOLDEN)` for its k-th output (the SplitMix64 construction),
//! so results never depend on which thread evaluated which path.

use rand::RngCore;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent 64-bit key from a parent key and a label.
#[inline]
pub fn derive(parent: u64, label: u64) -> u64 {
    mix64(parent ^ mix64(label.wrapping_add(GOLDEN).wrapping_mul(0xD6E8_FEB8_6659_FD93)))
}

#[derive(Debug, Clone)]
pub struct Substream {
    key: u64,
    counter: u64,
}

impl Substream {
    pub fn new(seed: u64, stream: u64, step: u64) -> Self {
        Self {
            key: derive(derive(seed, stream), step),
            counter: 0,
        }
    }

    pub fn from_key(key: u64) -> Self {
        Self { key, counter: 0 }
    }
}

impl RngCore for Substream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}
