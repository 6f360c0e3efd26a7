//! Counter-keyed random streams.
//!
//! Each stream is a ChaCha8 generator whose 256-bit key is the tuple
//! `(seed, index, field, 0)`. Any draw can be regenerated from its key alone,
//! independent of the order in which other streams were consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifies what a random stream is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Field {
    SpeakerCount = 1,
    Overlap = 2,
    SourceGains = 3,
    NoiseGain = 4,
    SourcePicks = 5,
    NoisePick = 6,
    Selection = 7,
    PoolAudio = 8,
    Batch = 9,
    Init = 10,
}

pub fn keyed(seed: u64, index: u64, field: Field) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&index.to_le_bytes());
    key[16..24].copy_from_slice(&(field as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
