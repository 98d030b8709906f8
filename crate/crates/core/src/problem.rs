//! Problem definition: nonuniform sample points, perturbed integer
//! frequencies, and the periodic-sinc coefficient matrix that connects a
//! nonuniform-frequency transform to a uniform one.
//!
//! The forward map evaluates, for sample points `x_j` in `[0, 1)` and
//! frequencies `omega_k` in `[-1/2, N - 1/2)`,
//!
//! ```text
//! f_j = sum_k exp(2 pi i x_j omega_k) u_k .
//! ```
//!
//! Each nonuniform-frequency exponential expands over the integer
//! frequencies `l` with coefficients `G(omega_k - l)` where `G` is the
//! [`kernel_g`] function; truncating that expansion to a window of
//! half-width `R` around the occupied band leaves a tail controlled by
//! [`truncation_bound_frobenius`].

use crate::dense::{C64, CMat};
use crate::rng::SeededRng;
use thiserror::Error;

/// Errors from problem construction and bound evaluation.
#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("sample point {index} = {value} outside [0, 1)")]
    InvalidPoint { index: usize, value: f64 },
    #[error("frequency {index} = {value} outside [-1/2, {max})")]
    InvalidFrequency { index: usize, value: f64, max: f64 },
    #[error("need at least as many samples as frequencies, got M = {m} < N = {n}")]
    TooFewSamples { m: usize, n: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("truncation bound requires window half-width >= 2, got {0}")]
    TruncationDomain(usize),
}

/// How sample points and frequencies are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointDistribution {
    /// Jittered equispaced points and jittered integer frequencies:
    /// `x_j = (j + beta phi_j) / M` (wrapped into [0, 1)) and
    /// `omega_k = k + alpha psi_k`, with `phi_j, psi_k` uniform on [-1, 1].
    PerturbedEquispaced,
    /// Uniformly random points on [0, 1) with jittered integer frequencies.
    RandomPoints,
}

/// Parameters for random instance generation.
#[derive(Debug, Clone, Copy)]
pub struct InstanceParams {
    pub distribution: PointDistribution,
    /// Frequency jitter amplitude, in [0, 1/2).
    pub alpha: f64,
    /// Sample-point jitter amplitude, in [0, 1/2); ignored for
    /// [`PointDistribution::RandomPoints`].
    pub beta: f64,
    pub seed: u64,
}

/// A type-3 nonuniform transform instance: `M` sample points and `N`
/// frequencies.
#[derive(Debug, Clone)]
pub struct NudftProblem {
    sample_points: Vec<f64>,
    frequencies: Vec<f64>,
}

impl NudftProblem {
    /// Validates ranges (`x` in [0, 1), `omega` in [-1/2, N - 1/2)) and the
    /// overdetermined shape `M >= N`.
    pub fn new(sample_points: Vec<f64>, frequencies: Vec<f64>) -> Result<Self, ProblemError> {
        let m = sample_points.len();
        let n = frequencies.len();
        if m < n {
            return Err(ProblemError::TooFewSamples { m, n });
        }
        for (index, &value) in sample_points.iter().enumerate() {
            if !(0.0..1.0).contains(&value) || !value.is_finite() {
                return Err(ProblemError::InvalidPoint { index, value });
            }
        }
        let max = n as f64 - 0.5;
        for (index, &value) in frequencies.iter().enumerate() {
            if !(-0.5..max).contains(&value) || !value.is_finite() {
                return Err(ProblemError::InvalidFrequency { index, value, max });
            }
        }
        Ok(NudftProblem { sample_points, frequencies })
    }

    /// Draws a random instance. Sample points use one substream of the seed
    /// and frequencies another, so the two sets can be varied independently.
    pub fn generate(m: usize, n: usize, params: InstanceParams) -> Result<Self, ProblemError> {
        if !(0.0..0.5).contains(&params.alpha) {
            return Err(ProblemError::InvalidParameter(format!(
                "alpha = {} outside [0, 1/2)",
                params.alpha
            )));
        }
        if !(0.0..0.5).contains(&params.beta) {
            return Err(ProblemError::InvalidParameter(format!(
                "beta = {} outside [0, 1/2)",
                params.beta
            )));
        }
        let mut point_rng = SeededRng::with_stream(params.seed, 1);
        let mut freq_rng = SeededRng::with_stream(params.seed, 2);
        let sample_points: Vec<f64> = match params.distribution {
            PointDistribution::PerturbedEquispaced => (0..m)
                .map(|j| {
                    let x = (j as f64 + params.beta * point_rng.uniform_symmetric()) / m as f64;
                    x.rem_euclid(1.0)
                })
                .collect(),
            PointDistribution::RandomPoints => (0..m).map(|_| point_rng.uniform()).collect(),
        };
        // Kept in index order: perturbations of size < 1/2 cannot reorder
        // the integer grid, and downstream stages rely only on the near-
        // monotone structure, not on exact sortedness.
        let frequencies: Vec<f64> = (0..n)
            .map(|k| k as f64 + params.alpha * freq_rng.uniform_symmetric())
            .collect();
        Self::new(sample_points, frequencies)
    }

    pub fn num_samples(&self) -> usize {
        self.sample_points.len()
    }

    pub fn num_frequencies(&self) -> usize {
        self.frequencies.len()
    }

    pub fn sample_points(&self) -> &[f64] {
        &self.sample_points
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    /// Direct O(MN) evaluation of the forward map with compensated phase
    /// reduction. Reference-quality; used as the ground truth for fast
    /// transforms at small sizes.
    pub fn dense_forward(&self, u: &[C64]) -> Vec<C64> {
        assert_eq!(u.len(), self.num_frequencies());
        self.sample_points
            .iter()
            .map(|&x| {
                let mut acc = C64::new(0.0, 0.0);
                for (&w, &c) in self.frequencies.iter().zip(u) {
                    acc += crate::transforms::unit_phase(x, w) * c;
                }
                acc
            })
            .collect()
    }

    /// Direct O(MN) evaluation of the adjoint map.
    pub fn dense_adjoint(&self, f: &[C64]) -> Vec<C64> {
        assert_eq!(f.len(), self.num_samples());
        self.frequencies
            .iter()
            .map(|&w| {
                let mut acc = C64::new(0.0, 0.0);
                for (&x, &v) in self.sample_points.iter().zip(f) {
                    acc += crate::transforms::unit_phase(x, w).conj() * v;
                }
                acc
            })
            .collect()
    }

    /// The full `M x N` transform matrix. Only sensible at small sizes.
    pub fn dense_matrix(&self) -> CMat {
        CMat::from_fn(self.num_samples(), self.num_frequencies(), |j, k| {
            crate::transforms::unit_phase(self.sample_points[j], self.frequencies[k])
        })
    }

    /// Column `k` of the dense transform matrix, evaluated on demand so
    /// that individual columns can be probed without materializing the
    /// whole matrix.
    pub fn matrix_column(&self, k: usize) -> Vec<C64> {
        let w = self.frequencies[k];
        self.sample_points
            .iter()
            .map(|&x| crate::transforms::unit_phase(x, w))
            .collect()
    }
}

/// Direct O(MN) forward map for the integer-frequency grid
/// `mode_offset, ..., mode_offset + u.len() - 1` at the given sample
/// points. Reference-quality, like [`NudftProblem::dense_forward`]; used
/// as ground truth for the structured integer-mode factor.
pub fn dense_integer_forward(points: &[f64], mode_offset: i64, u: &[C64]) -> Vec<C64> {
    points
        .iter()
        .map(|&x| {
            let mut acc = C64::new(0.0, 0.0);
            for (i, &c) in u.iter().enumerate() {
                let l = (mode_offset + i as i64) as f64;
                acc += crate::transforms::unit_phase(x, l) * c;
            }
            acc
        })
        .collect()
}

/// The periodic-sinc expansion kernel
/// `G(x) = exp(i pi x) sin(pi x) / (pi x)`, with `G(0) = 1`.
///
/// Near zero the ratio uses the two-term series `1 - (pi x)^2 / 6` to avoid
/// cancellation; the switch at `|x| < 1e-8` keeps the neglected term below
/// machine precision.
pub fn kernel_g(x: f64) -> C64 {
    let px = std::f64::consts::PI * x;
    let ratio = if x.abs() < 1e-8 {
        1.0 - px * px / 6.0
    } else {
        px.sin() / px
    };
    let (s, c) = px.sin_cos();
    C64::new(c, s) * ratio
}

/// Entry of the expansion-coefficient matrix: the weight of integer
/// frequency `l` in the expansion of the nonuniform frequency `omega`.
pub fn q_entry(omega: f64, l: i64) -> C64 {
    kernel_g(omega - l as f64)
}

/// The `(N + 2R) x N` coefficient matrix with rows indexed by the integer
/// frequencies `l = -R, ..., N - 1 + R` and columns by the nonuniform
/// frequencies: entry `(l, k) = G(omega_k - l)`.
pub fn coefficient_matrix(frequencies: &[f64], window: usize) -> CMat {
    let n = frequencies.len();
    let r = window as i64;
    CMat::from_fn(n + 2 * window, n, |li, k| {
        let l = li as i64 - r;
        q_entry(frequencies[k], l)
    })
}

/// Frobenius-norm bound on a unit-coefficient column tail outside the
/// window of half-width `R`: `sqrt(2) / (pi sqrt(R - 3/2))`. Requires
/// `R >= 2`.
pub fn truncation_bound_frobenius(window: usize) -> Result<f64, ProblemError> {
    if window < 2 {
        return Err(ProblemError::TruncationDomain(window));
    }
    Ok(std::f64::consts::SQRT_2 / (std::f64::consts::PI * (window as f64 - 1.5).sqrt()))
}

/// Expected squared tail of a single column outside the window of
/// half-width `R`, for a frequency jittered uniformly about an integer:
/// `2 / (pi^2 (R - 3/2))`. Requires `R >= 2`.
pub fn truncation_bound_mean_square(window: usize) -> Result<f64, ProblemError> {
    if window < 2 {
        return Err(ProblemError::TruncationDomain(window));
    }
    Ok(2.0 / (std::f64::consts::PI.powi(2) * (window as f64 - 1.5)))
}

/// Nearest integer to a frequency, rounding halves away from zero.
pub fn nearest_integer(omega: f64) -> i64 {
    omega.round() as i64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unperturbed_instance_is_the_integer_grid() {
        let p = NudftProblem::generate(
            8,
            4,
            InstanceParams {
                distribution: PointDistribution::PerturbedEquispaced,
                alpha: 0.0,
                beta: 0.0,
                seed: 1,
            },
        )
        .unwrap();
        for (j, &x) in p.sample_points().iter().enumerate() {
            assert_eq!(x, j as f64 / 8.0);
        }
        for (k, &w) in p.frequencies().iter().enumerate() {
            assert_eq!(w, k as f64);
        }
    }

    #[test]
    fn generated_instances_stay_in_range() {
        for &dist in &[PointDistribution::PerturbedEquispaced, PointDistribution::RandomPoints] {
            let p = NudftProblem::generate(
                128,
                64,
                InstanceParams { distribution: dist, alpha: 0.4, beta: 0.4, seed: 3 },
            )
            .unwrap();
            assert_eq!(p.num_samples(), 128);
            assert_eq!(p.num_frequencies(), 64);
            // Constructor re-validates ranges; also check the jitter is live.
            assert!(p.frequencies().iter().enumerate().any(|(k, &w)| w != k as f64));
        }
    }

    #[test]
    fn validation_rejects_bad_inputs() {
        assert!(matches!(
            NudftProblem::new(vec![0.0, 1.0], vec![0.0]),
            Err(ProblemError::InvalidPoint { index: 1, .. })
        ));
        assert!(matches!(
            NudftProblem::new(vec![0.0, 0.5], vec![1.5]),
            Err(ProblemError::InvalidFrequency { index: 0, .. })
        ));
        assert!(matches!(
            NudftProblem::new(vec![0.0], vec![0.0, 1.0]),
            Err(ProblemError::TooFewSamples { m: 1, n: 2 })
        ));
    }

    #[test]
    fn kernel_values_match_closed_forms() {
        assert_eq!(kernel_g(0.0), C64::new(1.0, 0.0));
        // G(1/2) = i * 2 / pi.
        let g = kernel_g(0.5);
        assert!((g - C64::new(0.0, 0.6366197723675814)).norm() < 1e-15);
        // Integer offsets other than zero are zeros of the kernel.
        for l in [-3i64, -1, 1, 2, 7] {
            assert!(kernel_g(l as f64).norm() < 1e-15);
        }
        // Continuity across the series switch: the magnitude (the sinc
        // ratio) must not jump. The values themselves differ by the phase
        // rotation between the two arguments, so compare norms.
        let below = kernel_g(0.99e-8).norm();
        let above = kernel_g(1.01e-8).norm();
        assert!((below - above).abs() < 1e-15);
    }

    #[test]
    fn truncation_bound_matches_closed_form() {
        // At R = 2 the bound collapses to 2 / pi.
        let b2 = truncation_bound_frobenius(2).unwrap();
        assert!((b2 - 0.6366197723675814).abs() < 1e-15);
        let b8 = truncation_bound_frobenius(8).unwrap();
        assert!((b8 - std::f64::consts::SQRT_2 / (std::f64::consts::PI * 6.5f64.sqrt())).abs() < 1e-16);
        assert!(truncation_bound_frobenius(1).is_err());
        // The mean-square bound is the square of the Frobenius bound.
        let ms = truncation_bound_mean_square(8).unwrap();
        assert!((ms - b8 * b8).abs() < 1e-16);
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(nearest_integer(2.5), 3);
        assert_eq!(nearest_integer(-2.5), -3);
        assert_eq!(nearest_integer(2.49), 2);
        assert_eq!(nearest_integer(-0.5), -1);
    }

    #[test]
    fn dense_forward_matches_matrix_and_adjoint() {
        let p = NudftProblem::generate(
            24,
            16,
            InstanceParams {
                distribution: PointDistribution::RandomPoints,
                alpha: 0.3,
                beta: 0.0,
                seed: 9,
            },
        )
        .unwrap();
        let mut rng = SeededRng::new(4);
        let u = rng.complex_vector(16);
        let f = rng.complex_vector(24);
        let a = p.dense_matrix();
        let au = a.matvec(&u);
        let fu = p.dense_forward(&u);
        for (x, y) in au.iter().zip(&fu) {
            assert!((x - y).norm() < 1e-12);
        }
        // Adjoint identity: <A u, f> = <u, A* f>.
        let ahf = p.dense_adjoint(&f);
        let lhs: C64 = fu.iter().zip(&f).map(|(a, b)| a.conj() * b).sum();
        let rhs: C64 = u.iter().zip(&ahf).map(|(a, b)| a.conj() * b).sum();
        assert!((lhs - rhs).norm() < 1e-10 * lhs.norm().max(1.0));
    }

    #[test]
    fn equispaced_forward_is_a_plain_dft() {
        // x_j = j/N, omega_k = k: the transform matrix is the inverse-sign
        // DFT matrix, so columns are orthogonal with norm sqrt(N).
        let n = 8;
        let p = NudftProblem::generate(
            n,
            n,
            InstanceParams {
                distribution: PointDistribution::PerturbedEquispaced,
                alpha: 0.0,
                beta: 0.0,
                seed: 0,
            },
        )
        .unwrap();
        let a = p.dense_matrix();
        let g = a.adjoint_mul(&a);
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j { n as f64 } else { 0.0 };
                assert!((g.get(i, j) - C64::new(expect, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn coefficient_matrix_shape_and_entries() {
        let freqs = [0.25, 1.0, 2.4];
        let q = coefficient_matrix(&freqs, 2);
        assert_eq!(q.nrows(), 3 + 4);
        assert_eq!(q.ncols(), 3);
        // Row index 0 is l = -2.
        assert!((q.get(0, 0) - kernel_g(0.25 + 2.0)).norm() < 1e-16);
        // An exactly integer frequency hits a single kernel peak.
        for li in 0..7 {
            let l = li as i64 - 2;
            let expect = if l == 1 { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            assert!((q.get(li, 1) - expect).norm() < 1e-15);
        }
    }

    #[test]
    fn column_tails_obey_the_truncation_bound() {
        // Small Monte-Carlo cousin of the full acceptance experiment: the
        // worst per-column tail mass outside the window must sit below the
        // Frobenius bound for a unit coefficient vector.
        let n = 16;
        let wide = 200i64; // proxy for the infinite expansion
        for &window in &[2usize, 8] {
            let bound = truncation_bound_frobenius(window).unwrap();
            let mut worst: f64 = 0.0;
            for seed in 0..10 {
                let p = NudftProblem::generate(
                    n,
                    n,
                    InstanceParams {
                        distribution: PointDistribution::PerturbedEquispaced,
                        alpha: 0.4,
                        beta: 0.0,
                        seed,
                    },
                )
                .unwrap();
                for &w in p.frequencies() {
                    let mut tail = 0.0;
                    for l in -wide..(n as i64 + wide) {
                        let inside = l >= -(window as i64) && l < n as i64 + window as i64;
                        if !inside {
                            tail += q_entry(w, l).norm_sqr();
                        }
                    }
                    worst = worst.max(tail.sqrt());
                }
            }
            assert!(
                worst < bound,
                "window {window}: worst tail {worst} exceeds bound {bound}"
            );
        }
    }
}
