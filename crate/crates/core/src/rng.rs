//! Named, independent random streams derived from one run seed.
//!
//! Each consumer gets its own ChaCha stream so that, for example, changing
//! how many draws the judge makes never perturbs subset selection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Pool = 1,
    Selection = 2,
    Judge = 3,
    Rollouts = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Rng for one Monte-Carlo rollout. `key` is drawn once per selection call,
/// `index` identifies the rollout (`proposal * rollouts + rollout`).
pub fn rollout_rng(key: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}
