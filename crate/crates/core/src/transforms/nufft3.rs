//! Fast evaluation of nonuniform-frequency exponential sums at nonuniform
//! points (and its exact adjoint).
//!
//! For points `x_j` and frequencies `omega_k`, the forward map is
//!
//! ```text
//! f_j = sum_k u_k exp(2 pi i x_j omega_k) .
//! ```
//!
//! Both coordinates are centered and rescaled, coefficients are spread
//! onto an oversampled grid in the frequency variable, one FFT turns the
//! grid into samples of a windowed transform, and interpolation in the
//! point variable plus two deconvolutions (one per window) recovers the
//! sum. With oversampling 2 on both sides, the grid holds roughly
//! `16 X S` points for half-widths `X` (points) and `S` (frequencies).

use super::kernel::{SpreadKernel, OVERSAMPLING};
use super::{next_fast_len, unit_phase, TransformError};
use crate::dense::{C64, CMat};
use rustfft::{Fft, FftPlanner};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

/// Reusable plan for one (points, frequencies, accuracy) triple.
pub struct Nufft3Plan {
    num_points: usize,
    num_freqs: usize,
    width: usize,
    /// Occupied slot count on the fine grid (band of the spread data).
    band_len: usize,
    fine_len: usize,
    fft_inv: Arc<dyn Fft<f64>>,
    fft_fwd: Arc<dyn Fft<f64>>,
    /// Frequency-side spreading: start index (wrapped), window values, and
    /// center phase per frequency.
    spread_start: Vec<u32>,
    spread_taps: Vec<f64>,
    pre_phase: Vec<C64>,
    /// Fine-grid slot and deconvolution factor per band index.
    band_slot: Vec<u32>,
    band_deconv: Vec<f64>,
    /// Point-side interpolation: start index (wrapped), window values, and
    /// combined phase/deconvolution factor per point.
    interp_start: Vec<u32>,
    interp_taps: Vec<f64>,
    post_phase: Vec<C64>,
    forward_batches: AtomicUsize,
    adjoint_batches: AtomicUsize,
}

impl Nufft3Plan {
    pub fn new(points: &[f64], freqs: &[f64], tol: f64) -> Result<Self, TransformError> {
        if points.is_empty() || freqs.is_empty() {
            return Err(TransformError::Empty);
        }
        if let Some(i) = points.iter().position(|x| !x.is_finite()) {
            return Err(TransformError::NonFinite(i));
        }
        if let Some(i) = freqs.iter().position(|x| !x.is_finite()) {
            return Err(TransformError::NonFinite(i));
        }
        let kernel = SpreadKernel::for_tolerance(tol)?;
        let width = kernel.width();
        let half_width = width as f64 / 2.0;

        let (x_min, x_max) = min_max(points);
        let (w_min, w_max) = min_max(freqs);
        let x_center = 0.5 * (x_min + x_max);
        let x_half = (0.5 * (x_max - x_min)).max(1e-9);
        let w_center = 0.5 * (w_min + w_max);
        let w_half = 0.5 * (w_max - w_min);

        // Frequency grid spacing: the centered points gamma * x' must
        // occupy at most 1/(2 sigma) of the periodic unit so that the
        // window transform has decayed at the first alias.
        let gamma = 1.0 / (2.0 * OVERSAMPLING as f64 * x_half);
        let mut band_len = (2.0 * w_half / gamma + width as f64).ceil() as usize + 2;
        band_len += band_len % 2;
        let fine_len = next_fast_len(OVERSAMPLING * band_len);
        let mut planner = FftPlanner::new();
        let fft_inv = planner.plan_fft_inverse(fine_len);
        let fft_fwd = planner.plan_fft_forward(fine_len);

        let band_half = (band_len / 2) as i64;
        let window_ft = kernel
            .fourier_grid(std::f64::consts::PI * width as f64 / fine_len as f64, band_len / 2 + 1);
        let mut band_slot = Vec::with_capacity(band_len);
        let mut band_deconv = Vec::with_capacity(band_len);
        for i in 0..band_len {
            let m = i as i64 - band_half;
            band_slot.push(m.rem_euclid(fine_len as i64) as u32);
            band_deconv.push(1.0 / (half_width * window_ft[m.unsigned_abs() as usize]));
        }

        let mut spread_start = Vec::with_capacity(freqs.len());
        let mut spread_taps = vec![0.0; freqs.len() * width];
        let mut pre_phase = Vec::with_capacity(freqs.len());
        for (k, &w) in freqs.iter().enumerate() {
            let shifted = w - w_center;
            let p = shifted / gamma;
            let s = kernel.taps(p, &mut spread_taps[k * width..(k + 1) * width]);
            debug_assert!(s >= -band_half && s + width as i64 <= band_half);
            spread_start.push(s.rem_euclid(fine_len as i64) as u32);
            pre_phase.push(unit_phase(x_center, shifted));
        }

        let mut interp_start = Vec::with_capacity(points.len());
        let mut interp_taps = vec![0.0; points.len() * width];
        let mut post_phase = Vec::with_capacity(points.len());
        let point_scale = std::f64::consts::PI * width as f64 * gamma;
        for (j, &x) in points.iter().enumerate() {
            let shifted = x - x_center;
            let q = gamma * shifted * fine_len as f64;
            let s = kernel.taps(q, &mut interp_taps[j * width..(j + 1) * width]);
            interp_start.push(s.rem_euclid(fine_len as i64) as u32);
            let deconv = 2.0 / (width as f64 * kernel.fourier(point_scale * shifted));
            post_phase.push(unit_phase(w_center, x) * deconv);
        }

        Ok(Nufft3Plan {
            num_points: points.len(),
            num_freqs: freqs.len(),
            width,
            band_len,
            fine_len,
            fft_inv,
            fft_fwd,
            spread_start,
            spread_taps,
            pre_phase,
            band_slot,
            band_deconv,
            interp_start,
            interp_taps,
            post_phase,
            forward_batches: AtomicUsize::new(0),
            adjoint_batches: AtomicUsize::new(0),
        })
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    pub fn num_freqs(&self) -> usize {
        self.num_freqs
    }

    /// Fine-grid length, exposed for cost accounting in tests.
    pub fn grid_len(&self) -> usize {
        self.fine_len
    }

    pub fn forward_batches(&self) -> usize {
        self.forward_batches.load(Ordering::Relaxed)
    }

    pub fn adjoint_batches(&self) -> usize {
        self.adjoint_batches.load(Ordering::Relaxed)
    }

    fn forward_into(&self, coeffs: &[C64], grid: &mut [C64], out: &mut [C64]) {
        grid.fill(C64::new(0.0, 0.0));
        let w = self.width;
        for (k, &u) in coeffs.iter().enumerate() {
            let a = u * self.pre_phase[k];
            let taps = &self.spread_taps[k * w..(k + 1) * w];
            let mut idx = self.spread_start[k] as usize;
            for &t in taps {
                grid[idx] += a * t;
                idx += 1;
                if idx == self.fine_len {
                    idx = 0;
                }
            }
        }
        for i in 0..self.band_len {
            grid[self.band_slot[i] as usize] *= self.band_deconv[i];
        }
        self.fft_inv.process(grid);
        for j in 0..self.num_points {
            let taps = &self.interp_taps[j * w..(j + 1) * w];
            let mut idx = self.interp_start[j] as usize;
            let mut acc = C64::new(0.0, 0.0);
            for &t in taps {
                acc += grid[idx] * t;
                idx += 1;
                if idx == self.fine_len {
                    idx = 0;
                }
            }
            out[j] = acc * self.post_phase[j];
        }
    }

    fn adjoint_into(&self, values: &[C64], grid: &mut [C64], out: &mut [C64]) {
        grid.fill(C64::new(0.0, 0.0));
        let w = self.width;
        for (j, &f) in values.iter().enumerate() {
            let a = f * self.post_phase[j].conj();
            let taps = &self.interp_taps[j * w..(j + 1) * w];
            let mut idx = self.interp_start[j] as usize;
            for &t in taps {
                grid[idx] += a * t;
                idx += 1;
                if idx == self.fine_len {
                    idx = 0;
                }
            }
        }
        self.fft_fwd.process(grid);
        for i in 0..self.band_len {
            grid[self.band_slot[i] as usize] *= self.band_deconv[i];
        }
        for k in 0..self.num_freqs {
            let taps = &self.spread_taps[k * w..(k + 1) * w];
            let mut idx = self.spread_start[k] as usize;
            let mut acc = C64::new(0.0, 0.0);
            for &t in taps {
                acc += grid[idx] * t;
                idx += 1;
                if idx == self.fine_len {
                    idx = 0;
                }
            }
            out[k] = acc * self.pre_phase[k].conj();
        }
    }

    /// `f_j = sum_k u_k e^{2 pi i x_j omega_k}` for one coefficient vector.
    pub fn forward(&self, coeffs: &[C64]) -> Vec<C64> {
        assert_eq!(coeffs.len(), self.num_freqs);
        let mut grid = vec![C64::new(0.0, 0.0); self.fine_len];
        let mut out = vec![C64::new(0.0, 0.0); self.num_points];
        self.forward_into(coeffs, &mut grid, &mut out);
        out
    }

    /// Exact adjoint of [`Nufft3Plan::forward`].
    pub fn adjoint(&self, values: &[C64]) -> Vec<C64> {
        assert_eq!(values.len(), self.num_points);
        let mut grid = vec![C64::new(0.0, 0.0); self.fine_len];
        let mut out = vec![C64::new(0.0, 0.0); self.num_freqs];
        self.adjoint_into(values, &mut grid, &mut out);
        out
    }

    /// Column-wise forward transform.
    pub fn forward_batch(&self, coeffs: &CMat) -> CMat {
        assert_eq!(coeffs.nrows(), self.num_freqs);
        self.forward_batches.fetch_add(1, Ordering::Relaxed);
        let mut grid = vec![C64::new(0.0, 0.0); self.fine_len];
        let mut out = CMat::zeros(self.num_points, coeffs.ncols());
        let mut col = vec![C64::new(0.0, 0.0); self.num_points];
        for c in 0..coeffs.ncols() {
            self.forward_into(coeffs.col(c), &mut grid, &mut col);
            out.col_mut(c).copy_from_slice(&col);
        }
        out
    }

    /// Column-wise adjoint transform.
    pub fn adjoint_batch(&self, values: &CMat) -> CMat {
        assert_eq!(values.nrows(), self.num_points);
        self.adjoint_batches.fetch_add(1, Ordering::Relaxed);
        let mut grid = vec![C64::new(0.0, 0.0); self.fine_len];
        let mut out = CMat::zeros(self.num_freqs, values.ncols());
        let mut col = vec![C64::new(0.0, 0.0); self.num_freqs];
        for c in 0..values.ncols() {
            self.adjoint_into(values.col(c), &mut grid, &mut col);
            out.col_mut(c).copy_from_slice(&col);
        }
        out
    }
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in xs {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::vec_norm;
    use crate::problem::{InstanceParams, NudftProblem, PointDistribution};
    use crate::rng::SeededRng;

    fn direct(points: &[f64], freqs: &[f64], u: &[C64]) -> Vec<C64> {
        points
            .iter()
            .map(|&x| {
                let mut acc = C64::new(0.0, 0.0);
                for (&w, &c) in freqs.iter().zip(u) {
                    acc += crate::transforms::unit_phase(x, w) * c;
                }
                acc
            })
            .collect()
    }

    #[test]
    fn forward_meets_the_requested_tolerance() {
        for &(n, mult, seed) in &[(5usize, 1usize, 1u64), (40, 2, 2), (129, 2, 3)] {
            let m = mult * n + 3;
            let p = NudftProblem::generate(
                m,
                n,
                InstanceParams {
                    distribution: PointDistribution::RandomPoints,
                    alpha: 0.4,
                    beta: 0.0,
                    seed,
                },
            )
            .unwrap();
            let mut rng = SeededRng::new(seed + 100);
            let u = rng.complex_vector(n);
            let exact = direct(p.sample_points(), p.frequencies(), &u);
            let scale = vec_norm(&exact);
            for &tol in &[1e-6, 1e-10, 1e-13] {
                let plan = Nufft3Plan::new(p.sample_points(), p.frequencies(), tol).unwrap();
                let fast = plan.forward(&u);
                let err: f64 = fast
                    .iter()
                    .zip(&exact)
                    .map(|(a, b)| (a - b).norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                assert!(
                    err <= tol * scale,
                    "N={n} M={m} tol={tol:e}: rel err {:e}",
                    err / scale
                );
            }
        }
    }

    #[test]
    fn handles_irregular_frequency_sets() {
        let points = [0.01, 0.13, 0.5, 0.77, 0.989, 0.4, 0.62];
        let freqs = [-0.49, 3.7, 12.01];
        let mut rng = SeededRng::new(5);
        let u = rng.complex_vector(3);
        let exact = direct(&points, &freqs, &u);
        let plan = Nufft3Plan::new(&points, &freqs, 1e-12).unwrap();
        let fast = plan.forward(&u);
        let scale = vec_norm(&exact);
        for (a, b) in fast.iter().zip(&exact) {
            assert!((a - b).norm() < 1e-12 * scale);
        }
    }

    #[test]
    fn single_frequency_is_a_pure_tone() {
        let points: Vec<f64> = (0..11).map(|j| j as f64 / 11.0).collect();
        let plan = Nufft3Plan::new(&points, &[0.3], 1e-12).unwrap();
        let f = plan.forward(&[C64::new(1.0, 0.0)]);
        for (j, v) in f.iter().enumerate() {
            let arg = std::f64::consts::TAU * points[j] * 0.3;
            let expect = C64::new(arg.cos(), arg.sin());
            assert!((v - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn adjoint_identity_holds_to_machine_precision() {
        let p = NudftProblem::generate(
            33,
            21,
            InstanceParams {
                distribution: PointDistribution::RandomPoints,
                alpha: 0.35,
                beta: 0.0,
                seed: 8,
            },
        )
        .unwrap();
        let plan = Nufft3Plan::new(p.sample_points(), p.frequencies(), 1e-9).unwrap();
        let mut rng = SeededRng::new(3);
        let u = rng.complex_vector(21);
        let f = rng.complex_vector(33);
        let au = plan.forward(&u);
        let ahf = plan.adjoint(&f);
        let lhs: C64 = au.iter().zip(&f).map(|(a, b)| a.conj() * b).sum();
        let rhs: C64 = u.iter().zip(&ahf).map(|(a, b)| a.conj() * b).sum();
        assert!((lhs - rhs).norm() < 1e-12 * lhs.norm().max(1.0));
    }

    #[test]
    fn adjoint_matches_the_direct_adjoint_sum() {
        let p = NudftProblem::generate(
            25,
            14,
            InstanceParams {
                distribution: PointDistribution::PerturbedEquispaced,
                alpha: 0.4,
                beta: 0.3,
                seed: 21,
            },
        )
        .unwrap();
        let plan = Nufft3Plan::new(p.sample_points(), p.frequencies(), 1e-11).unwrap();
        let mut rng = SeededRng::new(6);
        let f = rng.complex_vector(25);
        let fast = plan.adjoint(&f);
        let exact = p.dense_adjoint(&f);
        let scale = vec_norm(&exact);
        let err: f64 = fast
            .iter()
            .zip(&exact)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-11 * scale, "rel err {:e}", err / scale);
    }

    #[test]
    fn batches_match_single_applications_and_are_counted() {
        let p = NudftProblem::generate(
            19,
            12,
            InstanceParams {
                distribution: PointDistribution::RandomPoints,
                alpha: 0.2,
                beta: 0.0,
                seed: 4,
            },
        )
        .unwrap();
        let plan = Nufft3Plan::new(p.sample_points(), p.frequencies(), 1e-10).unwrap();
        let mut rng = SeededRng::new(10);
        let u = CMat::from_fn(12, 4, |_, _| rng.standard_complex());
        assert_eq!((plan.forward_batches(), plan.adjoint_batches()), (0, 0));
        let fwd = plan.forward_batch(&u);
        assert_eq!((plan.forward_batches(), plan.adjoint_batches()), (1, 0));
        for c in 0..4 {
            let single = plan.forward(u.col(c));
            for (a, b) in fwd.col(c).iter().zip(&single) {
                assert_eq!(a, b);
            }
        }
        let f = CMat::from_fn(19, 2, |_, _| rng.standard_complex());
        let adj = plan.adjoint_batch(&f);
        assert_eq!((plan.forward_batches(), plan.adjoint_batches()), (1, 1));
        for c in 0..2 {
            let single = plan.adjoint(f.col(c));
            for (a, b) in adj.col(c).iter().zip(&single) {
                assert_eq!(a, b);
            }
        }
    }
}
