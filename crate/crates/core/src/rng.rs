//! Counter-addressed random streams.
//!
//! A stream is identified by `(seed, trial, purpose)` (the ChaCha key), a
//! channel (the ChaCha nonce) and a block (the high bits of the ChaCha word
//! counter). Streams with different addresses never share counter values, so
//! trials can be generated in any order on any thread.

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

/// Word offset between consecutive blocks of one channel.
const BLOCK_SHIFT: u32 = 56;

/// What a stream is used for. Part of the key, so noise and initial
/// conditions of one trial are independent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Init,
    Noise,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Init => 1,
            Purpose::Noise => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub seed: u64,
    pub trial: u64,
    pub purpose: Purpose,
}

impl StreamKey {
    pub fn new(seed: u64, trial: u64, purpose: Purpose) -> Self {
        StreamKey { seed, trial, purpose }
    }

    /// The 256-bit ChaCha key. Injective in `(seed, trial, purpose)`.
    pub fn key_bytes(&self) -> [u8; 32] {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.trial.to_le_bytes());
        key[16..24].copy_from_slice(&self.purpose.tag().to_le_bytes());
        key
    }

    /// Sequential stream for `channel`, starting at the head of `block`.
    /// Blocks hold 2^56 words each; `block` must be below 4096.
    pub fn stream(&self, channel: u64, block: u64) -> CounterStream {
        self.stream_at(channel, block, 0)
    }

    /// Stream for `channel` positioned at the `normal_index`-th normal draw of
    /// `block` (each [`CounterStream::normal`] consumes four 32-bit words).
    pub fn stream_at(&self, channel: u64, block: u64, normal_index: u64) -> CounterStream {
        debug_assert!(block < 1 << 12);
        debug_assert!(normal_index < 1 << (BLOCK_SHIFT - 2));
        let mut rng = ChaCha8Rng::from_seed(self.key_bytes());
        rng.set_stream(channel);
        rng.set_word_pos((u128::from(block) << BLOCK_SHIFT) + 4 * u128::from(normal_index));
        CounterStream { rng }
    }
}

pub struct CounterStream {
    rng: ChaCha8Rng,
}

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

impl CounterStream {
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_M53
    }

    /// Standard normal by Box-Muller. Always consumes exactly two `u64`.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * TWO_POW_M53;
        let u2 = (self.next_u64() >> 11) as f64 * TWO_POW_M53;
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
