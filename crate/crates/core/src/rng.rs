//! Counter-based random streams keyed by `(seed, purpose, index)`.
//!
//! Every consumer asks for its own stream, so results do not depend on the
//! order in which independent units are processed. Streams are ChaCha8 with
//! the key derived from the master seed and the purpose tag, and the ChaCha
//! stream id set to the unit index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Master seed from which independent streams are split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    seed: u64,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn key(&self, tag: &str) -> [u8; 32] {
        let mut state = self.seed ^ fnv1a(tag).rotate_left(17);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        key
    }

    /// Stream number `index` for the given purpose.
    pub fn stream(&self, tag: &str, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key(tag));
        rng.set_stream(index);
        rng
    }

    /// A derived master seed, for nesting (e.g. replicate → sampler).
    pub fn child(&self, tag: &str, index: u64) -> Streams {
        let mut state = self.seed ^ fnv1a(tag) ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93);
        splitmix64(&mut state);
        Streams { seed: splitmix64(&mut state) }
    }
}
