//! Fast nonuniform discrete Fourier transforms.
//!
//! Three transform flavors back the solver stack:
//!
//! * [`uniform::UniformDft`] — the plain equispaced DFT (FFT-backed), the
//!   invertible factor that reduces uniform-frequency problems to
//!   rank-structured ones.
//! * [`nufft2::Nufft2Plan`] — integer frequencies evaluated at nonuniform
//!   points, with a configurable integer mode offset.
//! * [`nufft3::Nufft3Plan`] — nonuniform frequencies evaluated at
//!   nonuniform points.
//!
//! Both nonuniform plans follow the standard spread-FFT-deconvolve design
//! with an exponential-of-semicircle window at oversampling factor 2, and
//! both implement the exact algebraic adjoint of their forward
//! approximation, so adjoint identities hold to machine precision rather
//! than to the transform tolerance. Plans precompute spreading weights per
//! point, making repeated and batched applications cheap, and they count
//! batched calls so higher-level stages can assert how many times the
//! expensive oracles were touched.

pub mod kernel;
pub mod nufft2;
pub mod nufft3;
pub mod uniform;

pub use nufft2::Nufft2Plan;
pub use nufft3::Nufft3Plan;
pub use uniform::UniformDft;

use thiserror::Error;

/// Errors from transform plan construction.
#[derive(Debug, Error)]
pub enum TransformError {
    #[error("tolerance {0} outside supported range [1e-15, 1e-1]")]
    InvalidTolerance(f64),
    #[error("transform requires at least one point and one mode/frequency")]
    Empty,
    #[error("nonfinite input coordinate at index {0}")]
    NonFinite(usize),
}

/// `exp(2 pi i a b)`, with the product reduced modulo 1 in doubled
/// precision before the trig call. A naive `sin_cos(2 pi a b)` loses
/// `eps * |a b|` of phase, which at mode counts in the thousands already
/// caps accuracy near 1e-13; the compensated reduction keeps phases
/// accurate to machine precision regardless of magnitude.
pub fn unit_phase(a: f64, b: f64) -> crate::dense::C64 {
    let p = a * b;
    let err = a.mul_add(b, -p);
    let cycles = p.fract() + err;
    let (s, c) = (std::f64::consts::TAU * cycles).sin_cos();
    crate::dense::C64::new(c, s)
}

/// Smallest 5-smooth integer (2^a 3^b 5^c) at least `n`; FFT sizes of this
/// form keep the transform cost predictable.
pub(crate) fn next_fast_len(n: usize) -> usize {
    let n = n.max(1);
    let mut best = usize::MAX;
    let mut p5 = 1usize;
    while p5 < best {
        let mut p35 = p5;
        while p35 < best {
            // Smallest power of two lifting p35 to at least n.
            let mut candidate = p35;
            while candidate < n {
                match candidate.checked_mul(2) {
                    Some(c) => candidate = c,
                    None => {
                        candidate = usize::MAX;
                        break;
                    }
                }
            }
            if candidate < best {
                best = candidate;
            }
            match p35.checked_mul(3) {
                Some(c) => p35 = c,
                None => break,
            }
        }
        match p5.checked_mul(5) {
            Some(c) => p5 = c,
            None => break,
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::next_fast_len;

    #[test]
    fn fast_lengths_are_smooth_and_minimal() {
        assert_eq!(next_fast_len(1), 1);
        assert_eq!(next_fast_len(7), 8);
        assert_eq!(next_fast_len(9), 9);
        assert_eq!(next_fast_len(11), 12);
        assert_eq!(next_fast_len(17), 18);
        assert_eq!(next_fast_len(97), 100);
        assert_eq!(next_fast_len(1024), 1024);
        for n in 1..300 {
            let f = next_fast_len(n);
            assert!(f >= n);
            let mut m = f;
            for p in [2, 3, 5] {
                while m % p == 0 {
                    m /= p;
                }
            }
            assert_eq!(m, 1, "next_fast_len({n}) = {f} is not 5-smooth");
        }
    }
}
