//! Neural-network building blocks on top of candle tensors.

pub mod adamw;
pub mod layers;
pub mod ops;
pub mod store;

pub use adamw::{AdamW, AdamWConfig};
pub use layers::{instance_norm, ChannelNorm, Conv2d, Normalization};
pub use store::{HostTensor, ParamStore};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for a `(seed, stream)` pair, so every random draw in
/// training can be reproduced from the step number alone.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}
