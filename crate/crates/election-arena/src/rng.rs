//! Seed discipline: one master seed splits into independent streams so that
//! graph sampling, episode noise, update-target draws and parameter init can
//! be varied one at a time.
//!
//! Gumbel noise inside an episode is addressed by coordinates (kind, step,
//! agent, slot, category) instead of being drawn sequentially. This keeps the
//! noise consumed by one agent independent of how many draws other agents
//! made, which is what makes perturbed re-runs of an episode (gradient
//! checks) and resumed runs line up exactly.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent randomness streams derived from the master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Graph,
    Init,
    Noise,
    UpdateTarget,
    Eval,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Graph => 0x67726170,
            Stream::Init => 0x696e6974,
            Stream::Noise => 0x6e6f6973,
            Stream::UpdateTarget => 0x74726774,
            Stream::Eval => 0x6576616c,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Folds a coordinate list into a single well-mixed 64-bit key.
pub fn mix(seed: u64, coords: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ 0x243f6a8885a308d3);
    for &c in coords {
        h = splitmix64(h ^ c);
    }
    h
}

/// A ChaCha stream for (seed, stream, episode). Draw order within the stream
/// is up to the caller; distinct (stream, episode) pairs never collide.
pub fn stream_rng(seed: u64, stream: Stream, episode: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, &[stream.tag(), episode]))
}

/// Long-lived stream without an episode component (e.g. update targets).
pub fn control_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, &[stream.tag()]))
}

/// Coordinate-addressed uniform noise for one episode.
#[derive(Clone, Copy, Debug)]
pub struct NoiseField {
    base: u64,
}

/// Purpose tags for noise coordinates within an episode.
pub mod noise_kind {
    pub const FOLLOW: u64 = 1;
    pub const VOTE: u64 = 2;
    pub const SYMBOL: u64 = 3;
}

impl NoiseField {
    pub fn new(seed: u64, episode: u64) -> Self {
        NoiseField {
            base: mix(seed, &[Stream::Noise.tag(), episode]),
        }
    }

    /// Uniform in (0,1), clamped away from the endpoints so the double log
    /// in the Gumbel transform stays finite.
    pub fn uniform(&self, coords: &[u64]) -> f64 {
        let h = mix(self.base, coords);
        let u = ((h >> 11) as f64) * (1.0 / 9007199254740992.0);
        u.clamp(1e-12, 1.0 - 1e-12)
    }
}

pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
