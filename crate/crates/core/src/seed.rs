//! Master-seed fan-out.
//!
//! A run carries one master seed. Each consumer (data generation, corpus
//! split, held-out selection, shuffling, initialization, gradient probes)
//! draws its own sub-seed as `splitmix64(master ^ stream * GOLDEN)`, so that
//! changing how one consumer uses randomness never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// One round of the SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Named randomness consumers within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Split = 2,
    Holdout = 3,
    Shuffle = 4,
    Init = 5,
    Probe = 6,
}

pub fn derive_seed(master: u64, stream: Stream) -> u64 {
    splitmix64(master ^ (stream as u64).wrapping_mul(GOLDEN))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
