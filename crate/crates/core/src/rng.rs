//! Keyed random streams.
//!
//! Every random decision in a run draws from its own stream derived from the
//! run seed plus a purpose tag and integer coordinates (round, client slot,
//! sample index). Streams never depend on execution order, so client work
//! can be scheduled in any order or in parallel with identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Purpose tags separating the streams of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    ClientSampling = 2,
    Mapping = 3,
    ClientTrain = 4,
    SubModel = 5,
    DataMixture = 6,
    DataClient = 7,
    DataEval = 8,
    Centralized = 9,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 64-bit key from a seed, purpose and coordinates.
pub fn derive_key(seed: u64, purpose: Purpose, coords: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(purpose as u64));
    for &c in coords {
        h = splitmix64(h ^ splitmix64(c.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn stream(seed: u64, purpose: Purpose, coords: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_key(seed, purpose, coords))
}
