//! Deterministic random-stream fan-out.
//!
//! A single root seed is spread into independent ChaCha streams keyed by
//! (domain, index). Each consumer (per-time-step clutter, per-sample
//! training draw, per-sweep-point trials, ...) owns its own stream, so
//! changing how many values one consumer draws never perturbs another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Top-level stream namespaces. Each domain owns its own index space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamDomain {
    WorldGen = 1,
    SensorMiss = 2,
    SensorClutter = 3,
    SensorNoise = 4,
    Gps = 5,
    TrainSample = 6,
    NetInit = 7,
    EvalTrial = 8,
    Mcl = 9,
}

/// Independent RNG for (seed, domain, index).
pub fn substream(seed: u64, domain: StreamDomain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // 2^56 indices per domain; ChaCha streams are independent sequences.
    rng.set_stream(((domain as u64) << 56) | (index & ((1 << 56) - 1)));
    rng
}
