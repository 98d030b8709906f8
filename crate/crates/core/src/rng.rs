//! Reproducible random number generation.
//!
//! Two views of the same counter-based generator (ChaCha12):
//!
//! * [`SeededRng`] — a sequential stream for instance generation and tests,
//!   with independent substreams so that draws for one purpose do not shift
//!   another purpose's values.
//! * [`GaussianSource`] — a randomly addressable complex Gaussian matrix:
//!   entry `(i, j)` is a pure function of `(seed, i, j)`, so any block can
//!   be regenerated on demand without materializing the whole matrix. The
//!   sampling stages lean on this to stream test matrices through memory.
//!
//! All values are produced by explicit Box-Muller from raw 64-bit words, so
//! sequences are bit-identical across platforms.

use crate::dense::{C64, CMat};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Converts a raw word to a uniform double in (0, 1].
#[inline]
fn to_open_unit(x: u64) -> f64 {
    ((x >> 11) + 1) as f64 * (1.0 / 9007199254740992.0)
}

/// Converts a raw word to a uniform double in [0, 1).
#[inline]
fn to_half_open_unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / 9007199254740992.0)
}

/// Box-Muller pair: a complex sample with independent real and imaginary
/// parts, each N(0, 1/2), so that E|z|^2 = 1.
#[inline]
fn standard_complex_from_words(w1: u64, w2: u64) -> C64 {
    let u1 = to_open_unit(w1);
    let u2 = to_half_open_unit(w2);
    let r = (-u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    C64::new(r * c, r * s)
}

/// Sequential seeded generator.
pub struct SeededRng {
    inner: ChaCha12Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Independent substream `stream` of the generator seeded by `seed`.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng { inner }
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        to_half_open_unit(self.inner.next_u64())
    }

    /// Uniform in [-1, 1].
    pub fn uniform_symmetric(&mut self) -> f64 {
        2.0 * self.uniform() - 1.0
    }

    /// Complex Gaussian with variance 1/2 per component.
    pub fn standard_complex(&mut self) -> C64 {
        let w1 = self.inner.next_u64();
        let w2 = self.inner.next_u64();
        standard_complex_from_words(w1, w2)
    }

    pub fn complex_vector(&mut self, n: usize) -> Vec<C64> {
        (0..n).map(|_| self.standard_complex()).collect()
    }
}

/// Randomly addressable complex Gaussian matrix.
///
/// Column `j` maps to ChaCha stream `j + 1`; entry `i` uses the two 64-bit
/// words at word offset `4 * i` in that stream (a ChaCha word is 32 bits).
pub struct GaussianSource {
    seed: u64,
}

impl GaussianSource {
    pub fn new(seed: u64) -> Self {
        GaussianSource { seed }
    }

    /// The block with rows `r0..r1` and columns `c0..c1`.
    pub fn block(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> CMat {
        let m = r1 - r0;
        let mut out = CMat::zeros(m, c1 - c0);
        for j in c0..c1 {
            let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
            rng.set_stream(j as u64 + 1);
            rng.set_word_pos(4 * r0 as u128);
            let col = out.col_mut(j - c0);
            for v in col.iter_mut() {
                let w1 = rng.next_u64();
                let w2 = rng.next_u64();
                *v = standard_complex_from_words(w1, w2);
            }
        }
        out
    }

    /// Convenience for a full `rows x cols` matrix.
    pub fn matrix(&self, rows: usize, cols: usize) -> CMat {
        self.block(0, rows, 0, cols)
    }
}
