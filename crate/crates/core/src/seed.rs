//! Counter-based seed splitting. Every derived seed is a pure function of
//! `(parent, stream, counter)`, read from the ChaCha20 keystream keyed by the
//! parent, so runs never depend on the order in which seeds are drawn.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Named streams, one per consumer of randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Cell = 1,
    Reference = 2,
    Calibration = 3,
    Pour = 4,
    Verify = 5,
    Design = 6,
    Rollout = 7,
}

pub fn derive(parent: u64, stream: Stream, counter: u64) -> u64 {
    derive_raw(parent, stream as u64, counter)
}

pub fn derive_raw(parent: u64, stream: u64, counter: u64) -> u64 {
    let mut rng = ChaCha20Rng::seed_from_u64(parent);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(counter) * 2);
    rng.next_u64()
}

/// Stable 64-bit FNV-1a hash of a label, used to turn names into stream ids.
pub fn label(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
