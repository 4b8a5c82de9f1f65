//! Seeded random streams.
//!
//! Every stochastic routine takes a [`ChaCha8Rng`]. Parallel Monte Carlo
//! derives one independent generator per replication with [`child_seed`]:
//!
//! ```text
//! child_seed(master, cell, rep) = mix(mix(mix(master) ^ cell) ^ rep)
//! ```
//!
//! where `mix` is the SplitMix64 finalizer. Replication `rep` of a cell always
//! sees the same stream, whatever the worker count or scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::Mat;

pub type Rng = ChaCha8Rng;

/// SplitMix64 output function.
pub fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn child_seed(master: u64, cell: u64, rep: u64) -> u64 {
    mix64(mix64(mix64(master) ^ cell) ^ rep)
}

/// Stable key for a grid cell from its coordinates, so a cell keeps its
/// streams when the surrounding grid changes.
pub fn cell_key(coords: &[u64]) -> u64 {
    coords.iter().fold(0x5EED_u64, |acc, &c| mix64(acc ^ c))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn standard_normal_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Mat {
    // fill in column-major order so the draw order is part of the contract
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(StandardNormal.sample(rng));
    }
    Mat::from_vec(rows, cols, data)
}

/// Haar-distributed `d×r` orthonormal frame: QR of a Gaussian matrix with the
/// signs of `R`'s diagonal folded into `Q`.
pub fn haar_frame(rng: &mut Rng, d: usize, r: usize) -> Mat {
    let g = standard_normal_matrix(rng, d, r);
    let qr = g.qr();
    let mut q = qr.q();
    let rmat = qr.r();
    for j in 0..r {
        if rmat[(j, j)] < 0.0 {
            q.column_mut(j).iter_mut().for_each(|x| *x = -*x);
        }
    }
    q
}
