//! Rank-structured direct least-squares solvers for nonuniform discrete
//! Fourier transforms.
//!
//! The library is organized bottom-up:
//!
//! * [`dense`] — dense complex linear algebra kernels (QR, pivoted QR,
//!   triangular solves, small SVD) that the structured factorizations
//!   are built from.
//! * [`rng`] — reproducible, randomly addressable Gaussian streams used
//!   for sampling and instance generation.
//! * [`problem`] — nonuniform DFT problem instances, dense reference
//!   transforms, and the sinc-kernel coefficient matrix with its
//!   truncation bound.
//! * [`transforms`] — uniform DFT plans and fast nonuniform transforms
//!   (gridding/spreading with an exponential-of-semicircle window).
//! * [`hss`] — hierarchically block-separable matrices: trees, telescoping
//!   matvecs, and randomized black-box compression from matvec oracles.
//! * [`urv`] — orthogonal URV factorization of an HSS matrix and the
//!   associated least-squares solve and its adjoint.
//! * [`inudft`] — fast direct solvers for the uniform-frequency (type-2)
//!   and general (type-3) inverse problems, plus the normal-equation
//!   preconditioner.
//! * [`iterative`] — conjugate-gradient iterations on the normal equations
//!   with optional preconditioning.

pub mod dense;
pub mod hss;
pub mod inudft;
pub mod iterative;
pub mod urv;
pub mod problem;
pub mod rng;
pub mod transforms;

pub use dense::{CMat, C64};
