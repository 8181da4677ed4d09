//! Seeded substreams.
//!
//! Every independent random source (a block of Monte Carlo trials, one
//! user's arrival process, request dispatch) draws from its own ChaCha8
//! stream keyed by the master seed and a stream id, so results do not depend
//! on execution order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Name of the environment variable the CLI reads a default seed from.
pub const SEED_ENV_VAR: &str = "IDLETUNE_SEED";

pub const DEFAULT_SEED: u64 = 0x1d1e_7135;

/// Stream ids at or above this value are reserved for non-user sources.
pub(crate) const AUX_STREAM_BASE: u64 = 1 << 62;

pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
