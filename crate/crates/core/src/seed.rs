//! Seed derivation.
//!
//! A single 64-bit master seed fans out into independent streams keyed by
//! sample attempt and by subsystem. Every stream is derived with the
//! splitmix64 finalizer so that neighbouring keys produce unrelated seeds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Subsystems that draw random numbers while building one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Colon,
    Polyp,
    Placement,
    Material,
    Render,
    Toy,
    Training,
    /// Per-sample choices made by the dataset builder.
    Sample,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Colon => 0x636f_6c6f_6e00_0001,
            Stream::Polyp => 0x706f_6c79_7000_0002,
            Stream::Placement => 0x706c_6163_6500_0003,
            Stream::Material => 0x6d61_7465_7200_0004,
            Stream::Render => 0x7265_6e64_6500_0005,
            Stream::Toy => 0x746f_7900_0000_0006,
            Stream::Training => 0x7472_6169_6e00_0007,
            Stream::Sample => 0x7361_6d70_6c00_0008,
        }
    }
}

/// The splitmix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combines a parent seed with a key into a child seed.
pub fn derive(parent: u64, key: u64) -> u64 {
    splitmix64(parent ^ splitmix64(key))
}

/// Seed of the `attempt`-th candidate sample of a dataset build.
///
/// Depends only on the master seed and the attempt index, never on which
/// earlier attempts were accepted.
pub fn attempt_seed(master: u64, attempt: u64) -> u64 {
    derive(master, attempt.wrapping_add(1))
}

pub fn stream_seed(sample_seed: u64, stream: Stream) -> u64 {
    derive(sample_seed, stream.tag())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream_rng(sample_seed: u64, stream: Stream) -> ChaCha8Rng {
    rng(stream_seed(sample_seed, stream))
}
