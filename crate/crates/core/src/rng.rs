//! Seed derivation. Every random draw in the toolkit comes from a ChaCha8
//! generator keyed by the root seed; the sample index and the purpose of the
//! draw select the ChaCha stream, so regenerating sample `i` alone yields the
//! same bytes as regenerating the whole dataset.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a derived stream is used for. The tag occupies the low byte of the
/// ChaCha stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Phantom = 1,
    Jitter = 2,
    Noise = 3,
    Split = 4,
    Init = 5,
    Batches = 6,
}

pub fn stream(root: u64, index: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream((index << 8) | purpose as u64);
    rng
}
