//! Seeded random streams.
//!
//! Every random quantity in the toolkit is drawn from a ChaCha8 stream keyed by
//! a user seed and a purpose-specific stream id, so that independent draws
//! (rotations, resampling, fixture layers) never share state and the output
//! is reproducible across builds and platforms.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Name of the generator, recorded in fixture metadata.
pub const GENERATOR_NAME: &str = "ChaCha8 (rand_chacha 0.9, seed_from_u64 + set_stream); normals: rand_distr 0.5 StandardNormal ziggurat";

/// Stream ids reserved for library-internal draws.
pub mod streams {
    pub const ROTATION: u64 = 1;
    pub const RESAMPLE: u64 = 2;
    pub const SPIKE_VECTORS: u64 = 3;
    pub const WEIGHTS: u64 = 4;
    /// Fixture streams start here; each layer consumes a block of 16.
    pub const FIXTURE_BASE: u64 = 1 << 20;
}

pub type SeededRng = ChaCha8Rng;

pub fn stream(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// `rows x cols` matrix of i.i.d. standard normals, filled row by row.
pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m[(r, c)] = gaussian(rng);
        }
    }
    m
}
