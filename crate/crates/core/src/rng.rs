//! Counter-based RNG substreams.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed by a base
//! seed plus a tuple of integer tags (purpose, client id, round, ...). Streams
//! never depend on call order, so parallel and serial schedules see the same
//! numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{Matrix, Vector};

/// Purpose tags separating independent streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    GroundTruthBasis = 1,
    GroundTruthHeads = 2,
    Batch = 3,
    ClientSampling = 4,
    Init = 5,
    NewClient = 6,
    NewClientTrain = 7,
    NewClientTest = 8,
    FullMeas = 9,
    Misc = 10,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic generator for `(seed, stream, tags...)`.
pub fn substream(seed: u64, stream: Stream, tags: &[u64]) -> ChaCha8Rng {
    let mut state = seed;
    let mut acc = splitmix64(&mut state) ^ (stream as u64).wrapping_mul(0xA24B_AED4_963E_E407);
    for &t in tags {
        let mut s = acc ^ t.wrapping_mul(0x9FB2_1C65_1E98_DF25);
        acc = splitmix64(&mut s);
    }
    let mut key = [0u8; 32];
    let mut s = acc;
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Derived `u64` seed for `(seed, stream, tags...)`, for APIs that take a seed.
pub fn derive_seed(seed: u64, stream: Stream, tags: &[u64]) -> u64 {
    use rand::Rng;
    substream(seed, stream, tags).random()
}

pub fn gaussian_matrix<R: rand::Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    // fill row-major so the draw order matches the exported layout
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Matrix::from_row_slice(rows, cols, &data)
}

pub fn gaussian_vector<R: rand::Rng>(rng: &mut R, len: usize) -> Vector {
    Vector::from_iterator(len, (0..len).map(|_| StandardNormal.sample(rng)))
}
