//! Fast evaluation of integer-frequency exponential sums at nonuniform
//! points (and its exact adjoint).
//!
//! For points `x_j` and modes `l = l0, ..., l0 + K - 1`, the forward map is
//!
//! ```text
//! f_j = sum_l c_l exp(2 pi i x_j l) .
//! ```
//!
//! The plan deconvolves the coefficients by the window transform, runs one
//! oversampled FFT, and interpolates with a width-`w` window at each
//! point. Spreading weights are precomputed per point, so repeated
//! applications cost one FFT plus `O(Mw)` work.

use super::kernel::{SpreadKernel, OVERSAMPLING};
use super::{next_fast_len, unit_phase, TransformError};
use crate::dense::{C64, CMat};
use rustfft::{Fft, FftPlanner};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

/// Reusable plan for one point set, mode count, and accuracy target.
pub struct Nufft2Plan {
    num_points: usize,
    num_modes: usize,
    mode_offset: i64,
    width: usize,
    fine_len: usize,
    fft_inv: Arc<dyn Fft<f64>>,
    fft_fwd: Arc<dyn Fft<f64>>,
    /// First fine-grid index per point, pre-wrapped into [0, fine_len).
    start: Vec<u32>,
    /// Window values per point, `width` consecutive entries each.
    taps: Vec<f64>,
    /// Fine-grid slot per mode.
    slot: Vec<u32>,
    /// Window-transform deconvolution factor per mode.
    deconv: Vec<f64>,
    /// Center-frequency phase per point.
    phase: Vec<C64>,
    batch_calls: AtomicUsize,
}

impl Nufft2Plan {
    /// Plans the transform for `points` (interpreted periodically on
    /// [0, 1)) and `num_modes` integer frequencies starting at
    /// `mode_offset`, accurate to relative tolerance `tol`.
    pub fn new(
        points: &[f64],
        num_modes: usize,
        mode_offset: i64,
        tol: f64,
    ) -> Result<Self, TransformError> {
        if points.is_empty() || num_modes == 0 {
            return Err(TransformError::Empty);
        }
        if let Some(i) = points.iter().position(|x| !x.is_finite()) {
            return Err(TransformError::NonFinite(i));
        }
        let kernel = SpreadKernel::for_tolerance(tol)?;
        let width = kernel.width();
        let fine_len = next_fast_len((OVERSAMPLING * num_modes).max(2 * width));
        let mut planner = FftPlanner::new();
        let fft_inv = planner.plan_fft_inverse(fine_len);
        let fft_fwd = planner.plan_fft_forward(fine_len);

        // Modes are processed relative to the integer center c so the fine
        // grid carries the band [-K/2, K/2); the offset survives only in
        // the per-point phase e^{2 pi i c x}.
        let half = (num_modes / 2) as i64;
        let center = mode_offset + half;
        let mut slot = Vec::with_capacity(num_modes);
        let max_abs_m = half.max(num_modes as i64 - 1 - half) as usize;
        let window_ft =
            kernel.fourier_grid(std::f64::consts::PI * width as f64 / fine_len as f64, max_abs_m + 1);
        let mut deconv = Vec::with_capacity(num_modes);
        let half_width = width as f64 / 2.0;
        for k in 0..num_modes {
            let m = k as i64 - half;
            slot.push(m.rem_euclid(fine_len as i64) as u32);
            deconv.push(1.0 / (half_width * window_ft[m.unsigned_abs() as usize]));
        }

        let mut start = Vec::with_capacity(points.len());
        let mut taps = vec![0.0; points.len() * width];
        let mut phase = Vec::with_capacity(points.len());
        for (j, &x) in points.iter().enumerate() {
            let q = x.rem_euclid(1.0) * fine_len as f64;
            let s = kernel.taps(q, &mut taps[j * width..(j + 1) * width]);
            start.push(s.rem_euclid(fine_len as i64) as u32);
            phase.push(unit_phase(center as f64, x));
        }

        Ok(Nufft2Plan {
            num_points: points.len(),
            num_modes,
            mode_offset,
            width,
            fine_len,
            fft_inv,
            fft_fwd,
            start,
            taps,
            slot,
            deconv,
            phase,
            batch_calls: AtomicUsize::new(0),
        })
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    pub fn num_modes(&self) -> usize {
        self.num_modes
    }

    pub fn mode_offset(&self) -> i64 {
        self.mode_offset
    }

    /// Number of batched applications performed so far (forward and
    /// adjoint combined).
    pub fn batched_calls(&self) -> usize {
        self.batch_calls.load(Ordering::Relaxed)
    }

    fn forward_into(&self, modes: &[C64], grid: &mut [C64], out: &mut [C64]) {
        grid.fill(C64::new(0.0, 0.0));
        for (k, &c) in modes.iter().enumerate() {
            grid[self.slot[k] as usize] = c * self.deconv[k];
        }
        self.fft_inv.process(grid);
        for j in 0..self.num_points {
            let taps = &self.taps[j * self.width..(j + 1) * self.width];
            let mut idx = self.start[j] as usize;
            let mut acc = C64::new(0.0, 0.0);
            for &t in taps {
                acc += grid[idx] * t;
                idx += 1;
                if idx == self.fine_len {
                    idx = 0;
                }
            }
            out[j] = acc * self.phase[j];
        }
    }

    fn adjoint_into(&self, values: &[C64], grid: &mut [C64], out: &mut [C64]) {
        grid.fill(C64::new(0.0, 0.0));
        for j in 0..self.num_points {
            let a = values[j] * self.phase[j].conj();
            let taps = &self.taps[j * self.width..(j + 1) * self.width];
            let mut idx = self.start[j] as usize;
            for &t in taps {
                grid[idx] += a * t;
                idx += 1;
                if idx == self.fine_len {
                    idx = 0;
                }
            }
        }
        self.fft_fwd.process(grid);
        for k in 0..self.num_modes {
            out[k] = grid[self.slot[k] as usize] * self.deconv[k];
        }
    }

    /// `f = sum_l c_l e^{2 pi i x l}` for one coefficient vector.
    pub fn forward(&self, modes: &[C64]) -> Vec<C64> {
        assert_eq!(modes.len(), self.num_modes);
        let mut grid = vec![C64::new(0.0, 0.0); self.fine_len];
        let mut out = vec![C64::new(0.0, 0.0); self.num_points];
        self.forward_into(modes, &mut grid, &mut out);
        out
    }

    /// Exact adjoint of [`Nufft2Plan::forward`].
    pub fn adjoint(&self, values: &[C64]) -> Vec<C64> {
        assert_eq!(values.len(), self.num_points);
        let mut grid = vec![C64::new(0.0, 0.0); self.fine_len];
        let mut out = vec![C64::new(0.0, 0.0); self.num_modes];
        self.adjoint_into(values, &mut grid, &mut out);
        out
    }

    /// Column-wise forward transform of a coefficient matrix.
    pub fn forward_batch(&self, modes: &CMat) -> CMat {
        assert_eq!(modes.nrows(), self.num_modes);
        self.batch_calls.fetch_add(1, Ordering::Relaxed);
        let mut grid = vec![C64::new(0.0, 0.0); self.fine_len];
        let mut out = CMat::zeros(self.num_points, modes.ncols());
        for c in 0..modes.ncols() {
            let mut col = vec![C64::new(0.0, 0.0); self.num_points];
            self.forward_into(modes.col(c), &mut grid, &mut col);
            out.col_mut(c).copy_from_slice(&col);
        }
        out
    }

    /// Column-wise adjoint transform of a value matrix.
    pub fn adjoint_batch(&self, values: &CMat) -> CMat {
        assert_eq!(values.nrows(), self.num_points);
        self.batch_calls.fetch_add(1, Ordering::Relaxed);
        let mut grid = vec![C64::new(0.0, 0.0); self.fine_len];
        let mut out = CMat::zeros(self.num_modes, values.ncols());
        for c in 0..values.ncols() {
            let mut col = vec![C64::new(0.0, 0.0); self.num_modes];
            self.adjoint_into(values.col(c), &mut grid, &mut col);
            out.col_mut(c).copy_from_slice(&col);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::vec_norm;
    use crate::rng::SeededRng;
    use crate::transforms::uniform::UniformDft;

    fn direct(points: &[f64], modes: &[C64], offset: i64) -> Vec<C64> {
        points
            .iter()
            .map(|&x| {
                let mut acc = C64::new(0.0, 0.0);
                for (k, &c) in modes.iter().enumerate() {
                    acc += crate::transforms::unit_phase(x, (offset + k as i64) as f64) * c;
                }
                acc
            })
            .collect()
    }

    fn random_points(rng: &mut SeededRng, m: usize) -> Vec<f64> {
        (0..m).map(|_| rng.uniform()).collect()
    }

    #[test]
    fn forward_meets_the_requested_tolerance() {
        let mut rng = SeededRng::new(42);
        for &(num_modes, offset) in &[(8usize, 0i64), (65, -5), (256, 11), (1, -3)] {
            let points = random_points(&mut rng, 2 * num_modes + 3);
            let modes = rng.complex_vector(num_modes);
            let exact = direct(&points, &modes, offset);
            let scale = vec_norm(&exact);
            for &tol in &[1e-6, 1e-10, 1e-13] {
                let plan = Nufft2Plan::new(&points, num_modes, offset, tol).unwrap();
                let fast = plan.forward(&modes);
                let err: f64 = fast
                    .iter()
                    .zip(&exact)
                    .map(|(a, b)| (a - b).norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                assert!(
                    err <= tol * scale,
                    "K={num_modes} offset={offset} tol={tol:e}: rel err {:e}",
                    err / scale
                );
            }
        }
    }

    #[test]
    fn adjoint_identity_holds_to_machine_precision() {
        let mut rng = SeededRng::new(7);
        let points = random_points(&mut rng, 37);
        let plan = Nufft2Plan::new(&points, 20, -4, 1e-8).unwrap();
        let u = rng.complex_vector(20);
        let f = rng.complex_vector(37);
        let au = plan.forward(&u);
        let ahf = plan.adjoint(&f);
        let lhs: C64 = au.iter().zip(&f).map(|(a, b)| a.conj() * b).sum();
        let rhs: C64 = u.iter().zip(&ahf).map(|(a, b)| a.conj() * b).sum();
        assert!((lhs - rhs).norm() < 1e-12 * lhs.norm().max(1.0));
    }

    #[test]
    fn equispaced_points_reproduce_the_fft() {
        let n = 64;
        let points: Vec<f64> = (0..n).map(|j| j as f64 / n as f64).collect();
        let plan = Nufft2Plan::new(&points, n, 0, 1e-13).unwrap();
        let mut rng = SeededRng::new(9);
        let c = rng.complex_vector(n);
        let fast = plan.forward(&c);
        // With x_j = j/N the transform matrix is the unnormalized adjoint
        // DFT.
        let dft = UniformDft::new(n);
        let mut expect = c.clone();
        dft.adjoint(&mut expect);
        let scale = vec_norm(&expect);
        let err: f64 = fast
            .iter()
            .zip(&expect)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-13 * scale);
    }

    #[test]
    fn batches_match_single_applications_and_are_counted() {
        let mut rng = SeededRng::new(12);
        let points = random_points(&mut rng, 30);
        let plan = Nufft2Plan::new(&points, 16, -2, 1e-10).unwrap();
        let m = CMat::from_fn(16, 3, |_, _| rng.standard_complex());
        assert_eq!(plan.batched_calls(), 0);
        let fwd = plan.forward_batch(&m);
        assert_eq!(plan.batched_calls(), 1);
        for c in 0..3 {
            let single = plan.forward(m.col(c));
            for (a, b) in fwd.col(c).iter().zip(&single) {
                assert_eq!(a, b);
            }
        }
        let v = CMat::from_fn(30, 2, |_, _| rng.standard_complex());
        let adj = plan.adjoint_batch(&v);
        assert_eq!(plan.batched_calls(), 2);
        for c in 0..2 {
            let single = plan.adjoint(v.col(c));
            for (a, b) in adj.col(c).iter().zip(&single) {
                assert_eq!(a, b);
            }
        }
    }
}
