//! Equispaced DFT wrapper.
//!
//! Fixes the sign and scaling conventions once: `forward` applies the
//! matrix `F` with entries `F(j, k) = exp(-2 pi i j k / N)` (unnormalized),
//! and `inverse` applies `F^{-1} = (1/N) F^H`. The solver pipeline uses
//! `F` as the invertible right factor that turns a uniform-frequency
//! transform into a rank-structured matrix.

use crate::dense::{C64, CMat};
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// FFT-backed equispaced DFT of a fixed size.
pub struct UniformDft {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    backward: Arc<dyn Fft<f64>>,
}

impl UniformDft {
    pub fn new(len: usize) -> Self {
        assert!(len > 0, "DFT size must be positive");
        let mut planner = FftPlanner::new();
        UniformDft {
            len,
            forward: planner.plan_fft_forward(len),
            backward: planner.plan_fft_inverse(len),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// In-place `x <- F x`.
    pub fn forward(&self, x: &mut [C64]) {
        assert_eq!(x.len(), self.len);
        self.forward.process(x);
    }

    /// In-place `x <- F^{-1} x`.
    pub fn inverse(&self, x: &mut [C64]) {
        assert_eq!(x.len(), self.len);
        self.backward.process(x);
        let scale = 1.0 / self.len as f64;
        for v in x.iter_mut() {
            *v *= scale;
        }
    }

    /// In-place `x <- F^H x` (unnormalized adjoint).
    pub fn adjoint(&self, x: &mut [C64]) {
        assert_eq!(x.len(), self.len);
        self.backward.process(x);
    }

    /// In-place `x <- F^{-H} x = (1/N) F x`.
    pub fn inverse_adjoint(&self, x: &mut [C64]) {
        assert_eq!(x.len(), self.len);
        self.forward.process(x);
        let scale = 1.0 / self.len as f64;
        for v in x.iter_mut() {
            *v *= scale;
        }
    }

    /// Applies one of the in-place maps to every column.
    pub fn apply_columns(&self, m: &mut CMat, op: fn(&Self, &mut [C64])) {
        assert_eq!(m.nrows(), self.len);
        for c in 0..m.ncols() {
            op(self, m.col_mut(c));
        }
    }
}
