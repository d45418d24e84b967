//! Deterministic random-stream derivation.
//!
//! Every random draw in an experiment comes from a ChaCha8 stream keyed by
//! `(seed, purpose, policy, track)`. Environment streams ignore the policy so
//! all policies of one seed face the same channels, states and noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// What a stream is used for. The discriminant is part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    /// Experiment-wide scene: transition tables, synthetic feature tables.
    Scene = 1,
    /// Per-track channel instance (theta, impulse responses, trajectory).
    Instance = 2,
    /// Hidden state and observation sequence.
    States = 3,
    /// Receiver noise / synthetic loss noise.
    Noise = 4,
    /// Monte Carlo draws of the regret oracle.
    Oracle = 5,
    /// Per-CPI decisions of a policy.
    Agent = 6,
    /// Meta-prior sampling at the start of a track.
    Meta = 7,
}

/// Build the stream for `(seed, purpose, policy, track)`.
///
/// `policy` is `None` for environment streams.
pub fn stream(seed: u64, purpose: Purpose, policy: Option<usize>, track: usize) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy_tag = policy.map_or(0xff, |p| p as u64 & 0xff);
    let id = ((purpose as u64) << 56) | (policy_tag << 48) | (track as u64 & 0xffff_ffff_ffff);
    rng.set_stream(id);
    rng
}
