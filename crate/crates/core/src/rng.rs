//! Keyed random streams.
//!
//! Every random draw in a simulation comes from a stream derived from the
//! experiment seed and a tuple of coordinates (purpose, participant, round,
//! step). Two streams with the same key produce the same sequence no matter
//! which thread opens them or in what order, which is what makes
//! client-parallel and seed-parallel execution bitwise-equal to serial runs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    TrainData = 2,
    TestData = 3,
    Shuffle = 4,
    Dirichlet = 5,
    Batches = 6,
    MaskScoreStep = 7,
    MaskWeightStep = 8,
    MaskUpload = 9,
    Participation = 10,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a seed and key coordinates into a 32-byte ChaCha seed.
fn derive_seed(seed: u64, purpose: Purpose, coords: &[u64]) -> [u8; 32] {
    let mut state = splitmix64(seed ^ 0x6665_6470_6577_7300);
    state = splitmix64(state ^ purpose as u64);
    for &c in coords {
        state = splitmix64(state ^ splitmix64(c));
    }
    let mut out = [0u8; 32];
    for (i, chunk) in out.chunks_exact_mut(8).enumerate() {
        state = splitmix64(state.wrapping_add(i as u64));
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    out
}

/// Opens the stream for `(seed, purpose, coords...)`.
pub fn stream(seed: u64, purpose: Purpose, coords: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(seed, purpose, coords))
}
