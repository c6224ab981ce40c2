//! Random stream derivation.
//!
//! A run owns one master seed. Every independent source of randomness
//! (arrivals, each server's service process, each dispatcher's routing
//! coin flips, each server's messaging coin flips) gets its own
//! [`SimRng`], seeded from `splitmix64(master ^ splitmix64(tag))` where
//! `tag` packs the stream kind in the top 16 bits and the index below.
//! Adding a consumer to one stream never shifts the draws seen by another.
//!
//! `ChaCha8Rng::seed_from_u64` is specified to be portable, so traces are
//! reproducible across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Arrivals,
    Service(usize),
    Dispatcher(usize),
    Server(usize),
    /// Reserved for test oracles so they never alias an engine stream.
    Oracle(usize),
}

impl Stream {
    fn tag(self) -> u64 {
        let (kind, index) = match self {
            Stream::Arrivals => (1u64, 0usize),
            Stream::Service(i) => (2, i),
            Stream::Dispatcher(j) => (3, j),
            Stream::Server(i) => (4, i),
            Stream::Oracle(k) => (5, k),
        };
        (kind << 48) | (index as u64 & 0xFFFF_FFFF_FFFF)
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: Stream) -> u64 {
    splitmix64(master ^ splitmix64(stream.tag()))
}

pub fn stream_rng(master: u64, stream: Stream) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, stream))
}
