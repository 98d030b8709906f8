//! Fast direct solvers for inverse nonuniform discrete Fourier problems.
//!
//! Both solvers rest on one observation: multiplying a nonuniform-sample
//! transform matrix `A(j, k) = exp(2 pi i x_j k)` on the right by the
//! inverse of the positive-sign uniform DFT yields a matrix whose entries
//! form a Cauchy-like kernel with poles confined to the diagonal band, so
//! its off-diagonal blocks have low numerical rank. That product is
//! compressed into HSS form from black-box FFT applications and
//! URV-factorized once; every later least-squares solve is a pair of
//! structured sweeps plus an FFT.
//!
//! * [`FastType2Solver`] handles integer frequencies directly.
//! * [`FastType3Solver`] handles real frequencies by factoring `A ≈ B·H`,
//!   where `B` is an integer-frequency matrix on a slightly enlarged mode
//!   range and `H` interpolates the true frequencies from the integer
//!   ones. `H` is itself rank-structured and is recovered by randomized
//!   sampling within a fixed budget of batched transforms and structured
//!   pseudoinverse applications.
//!
//! Sign convention: with `F(j, k) = exp(-2 pi i j k / N)` the right factor
//! used throughout is the conjugate transform `F^H`, whose inverse is
//! `(1/N) F`. This is the pairing that puts the kernel's poles on the
//! diagonal; in the equispaced square case the compressed product is then
//! exactly the identity permutation.

use crate::dense::{C64, CMat};
use crate::hss::{
    compress_from_sources, minimum_samples, sample_seeds, CompressOptions, GaussianRows,
    HssError, HssTree, PartitionedRows,
};
use crate::problem::NudftProblem;
use crate::rng::GaussianSource;
use crate::transforms::{Nufft2Plan, Nufft3Plan, TransformError, UniformDft};
use crate::urv::{urv_factorize, UrvError, UrvFactorization};
use std::time::Instant;
use thiserror::Error;

/// Errors from solver construction and application.
#[derive(Debug, Error)]
pub enum SolverError {
    /// The least-squares setup needs at least as many sample points as
    /// unknown coefficients.
    #[error("underdetermined system: {points} sample points for {unknowns} unknowns")]
    Underdetermined { points: usize, unknowns: usize },
    /// The accuracy parameter must lie strictly between 0 and 1.
    #[error("accuracy parameter must lie in (0, 1), got {0}")]
    Accuracy(f64),
    /// The rank parameter must be positive.
    #[error("rank parameter must be positive")]
    Rank,
    /// Guard against accidentally densifying a large solver.
    #[error("dense reconstruction of a {rows} x {cols} matrix exceeds the cap {cap}")]
    TooLarge { rows: usize, cols: usize, cap: usize },
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Compression(#[from] HssError),
    #[error(transparent)]
    Factorization(#[from] UrvError),
}

/// Construction knobs shared by both solvers.
#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Leaf size of the compression trees.
    pub leaf_size: usize,
    /// Seed for the Gaussian test matrices.
    pub seed: u64,
    /// Columns per slab in the streamed sampling stages. Only memory is
    /// affected: every slab is regenerated from the seed, so the samples
    /// are identical for any slab width.
    pub slab: usize,
    /// When set, the type-3 sampling transforms are also applied slab by
    /// slab instead of as two single batched calls. This trades the fixed
    /// batch budget (visible in [`Type3BuildStats`]) for a flat memory
    /// profile at the largest problem sizes; the sampled values are
    /// unchanged.
    pub nufft_slab: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            leaf_size: 128,
            seed: 7,
            slab: 64,
            nufft_slab: None,
        }
    }
}

/// Default accuracy for direct-solver use.
pub const RHO_DIRECT: f64 = 1e-12;
/// Default accuracy when the solver serves as a preconditioner.
pub const RHO_PRECONDITIONER: f64 = 1e-7;

/// Wall-clock breakdown of a solver construction, split along the
/// pipeline's stage boundaries: sampling and compression form the
/// construction stage, the URV factorizations the factorization stage.
#[derive(Clone, Copy, Debug, Default)]
pub struct BuildTimings {
    /// Seconds sampling the DFT-perturbation factor (FFT/NUFFT products).
    pub type2_sampling: f64,
    /// Seconds compressing those samples into HSS form.
    pub type2_compression: f64,
    /// Seconds URV-factorizing the compressed factor.
    pub type2_factorization: f64,
    /// Seconds sampling the interpolation factor (batched transforms and
    /// structured pseudoinverse solves).
    pub interpolation_sampling: f64,
    /// Seconds compressing the interpolation factor.
    pub interpolation_compression: f64,
    /// Seconds URV-factorizing the interpolation factor.
    pub interpolation_factorization: f64,
}

impl BuildTimings {
    /// Construction-stage total: sampling and compression of both factors.
    pub fn construction(&self) -> f64 {
        self.type2_sampling
            + self.type2_compression
            + self.interpolation_sampling
            + self.interpolation_compression
    }

    /// Factorization-stage total: both URV factorizations.
    pub fn factorization(&self) -> f64 {
        self.type2_factorization + self.interpolation_factorization
    }
}

/// Rank budget for compressing the DFT-perturbation product at accuracy
/// `rho`: proportional to `log(1/rho) * log2(N')`, floored at 20.
pub fn type2_rank(num_modes: usize, rho: f64) -> usize {
    let digits = (1.0 / rho).log2();
    let levels = (num_modes.max(2) as f64).log2();
    (1.2 * digits * levels / 4.0).ceil().max(20.0) as usize
}

/// Transform tolerance tied to the solver accuracy: one digit tighter,
/// floored at the plans' practical limit.
fn nufft_tolerance(rho: f64) -> f64 {
    (0.1 * rho).max(1e-13)
}

/// Direct solver for integer frequencies: `A(j, k) = exp(2 pi i x_j k)`
/// for `k = mode_offset .. mode_offset + N' - 1`, factored as the
/// rank-structured product `A = (A F^{-H}) F^H` with the structured part
/// held in URV-factorized form.
///
/// Points may arrive in any order: the structured factor is only
/// rank-compressible when contiguous row blocks cover spatially close
/// points, so construction sorts the points internally and every
/// operation translates between the caller's row order and the sorted
/// one. Results are always returned in the caller's order.
pub struct FastType2Solver {
    dft: UniformDft,
    urv: UrvFactorization,
    num_points: usize,
    num_modes: usize,
    mode_offset: i64,
    rho: f64,
    rank: usize,
    samples: usize,
    /// Internal row `i` holds the caller's sample `order[i]`; absent when
    /// the points were already sorted.
    order: Option<Vec<usize>>,
    timings: BuildTimings,
}

/// Sorting permutation of the points, or `None` when already sorted.
fn sorted_order(points: &[f64]) -> Option<Vec<usize>> {
    if points.windows(2).all(|w| w[0] <= w[1]) {
        return None;
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].total_cmp(&points[b]));
    Some(order)
}

/// Rows of `a` picked in permutation order: row `i` of the result is row
/// `order[i]` of `a`.
fn gather_rows(order: &[usize], a: &CMat) -> CMat {
    let mut out = CMat::zeros(order.len(), a.ncols());
    for c in 0..a.ncols() {
        for (i, &j) in order.iter().enumerate() {
            out.set(i, c, a.get(j, c));
        }
    }
    out
}

/// Inverse of [`gather_rows`]: row `i` of `a` lands on row `order[i]`.
fn scatter_rows(order: &[usize], a: &CMat) -> CMat {
    let mut out = CMat::zeros(a.nrows(), a.ncols());
    for c in 0..a.ncols() {
        for (i, &j) in order.iter().enumerate() {
            out.set(j, c, a.get(i, c));
        }
    }
    out
}

/// Builds the integer-frequency solver for `points` (periodic on [0, 1),
/// any order) and modes `mode_offset .. mode_offset + num_modes - 1` at
/// accuracy `rho`. The structured factor is compressed from streamed
/// black-box samples — each Gaussian slab is regenerated from the seed,
/// pushed through an FFT and a forward transform, and scattered into
/// leaf-partitioned storage, so no second full copy of the sample matrix
/// ever exists — then URV-factorized. Unsorted points are sorted
/// internally; every public operation works in the caller's row order.
pub fn build_type2(
    points: &[f64],
    num_modes: usize,
    mode_offset: i64,
    rho: f64,
    opts: &SolverOptions,
) -> Result<FastType2Solver, SolverError> {
    let m = points.len();
    if m < num_modes {
        return Err(SolverError::Underdetermined {
            points: m,
            unknowns: num_modes,
        });
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(SolverError::Accuracy(rho));
    }
    let order = sorted_order(points);
    let sorted_points: Vec<f64>;
    let internal_points = match &order {
        None => points,
        Some(ord) => {
            sorted_points = ord.iter().map(|&j| points[j]).collect();
            &sorted_points
        }
    };
    let plan = Nufft2Plan::new(internal_points, num_modes, mode_offset, nufft_tolerance(rho))?;
    let dft = UniformDft::new(num_modes);
    let tree = HssTree::new(m, num_modes, opts.leaf_size);
    let rank = type2_rank(num_modes, rho);
    let samples = minimum_samples(&tree, rank);
    let mut copts = CompressOptions::new(rank, samples, opts.seed);
    copts.rank_tolerance = 0.1 * rho;
    let (seed_omega, seed_psi) = sample_seeds(opts.seed);
    let slab = opts.slab.max(1);
    let mut timings = BuildTimings::default();
    let stage = Instant::now();

    // Forward samples Y = (A F^{-H}) Omega, streamed in column slabs.
    let mut y = PartitionedRows::for_tree_rows(&tree, samples);
    {
        let gauss = GaussianSource::new(seed_omega);
        let mut j0 = 0;
        while j0 < samples {
            let j1 = (j0 + slab).min(samples);
            let mut block = gauss.block(0, num_modes, j0, j1);
            dft.apply_columns(&mut block, UniformDft::inverse_adjoint);
            let fwd = plan.forward_batch(&block);
            for j in j0..j1 {
                y.set_column(j, fwd.col(j - j0));
            }
            j0 = j1;
        }
    }

    // Adjoint samples Z = (A F^{-H})^H Psi, streamed the same way.
    let mut z = PartitionedRows::for_tree_cols(&tree, samples);
    {
        let gauss = GaussianSource::new(seed_psi);
        let mut j0 = 0;
        while j0 < samples {
            let j1 = (j0 + slab).min(samples);
            let block = gauss.block(0, m, j0, j1);
            let mut adj = plan.adjoint_batch(&block);
            dft.apply_columns(&mut adj, UniformDft::inverse);
            for j in j0..j1 {
                z.set_column(j, adj.col(j - j0));
            }
            j0 = j1;
        }
    }

    timings.type2_sampling = stage.elapsed().as_secs_f64();

    let stage = Instant::now();
    let mut omega_src = GaussianRows::new(seed_omega, num_modes, samples);
    let mut psi_src = GaussianRows::new(seed_psi, m, samples);
    let hss = compress_from_sources(&tree, &mut omega_src, &mut y, &mut psi_src, &mut z, &copts)?;
    timings.type2_compression = stage.elapsed().as_secs_f64();

    let stage = Instant::now();
    let urv = urv_factorize(hss)?;
    timings.type2_factorization = stage.elapsed().as_secs_f64();
    Ok(FastType2Solver {
        dft,
        urv,
        num_points: m,
        num_modes,
        mode_offset,
        rho,
        rank,
        samples,
        order,
        timings,
    })
}

impl FastType2Solver {
    pub fn num_points(&self) -> usize {
        self.num_points
    }

    pub fn num_modes(&self) -> usize {
        self.num_modes
    }

    pub fn mode_offset(&self) -> i64 {
        self.mode_offset
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Rank budget used for the compression.
    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Test-matrix columns used for the compression.
    pub fn samples(&self) -> usize {
        self.samples
    }

    /// The factorization of the structured factor.
    pub fn urv(&self) -> &UrvFactorization {
        &self.urv
    }

    /// Wall-clock breakdown of the construction.
    pub fn timings(&self) -> &BuildTimings {
        &self.timings
    }

    /// Samples in internal (sorted) row order.
    fn to_internal(&self, f: &[C64]) -> Vec<C64> {
        match &self.order {
            None => f.to_vec(),
            Some(ord) => ord.iter().map(|&j| f[j]).collect(),
        }
    }

    /// Samples back in the caller's row order.
    fn to_caller(&self, f: Vec<C64>) -> Vec<C64> {
        match &self.order {
            None => f,
            Some(ord) => {
                let mut out = vec![C64::new(0.0, 0.0); f.len()];
                for (i, &j) in ord.iter().enumerate() {
                    out[j] = f[i];
                }
                out
            }
        }
    }

    /// Fast forward product `f = A u`, evaluated as the structured factor
    /// applied to `F^H u`.
    pub fn apply(&self, u: &[C64]) -> Vec<C64> {
        assert_eq!(u.len(), self.num_modes, "dimension mismatch");
        let mut t = u.to_vec();
        self.dft.adjoint(&mut t);
        self.to_caller(self.urv.apply(&t))
    }

    /// Batched fast forward product.
    pub fn apply_mat(&self, u: &CMat) -> CMat {
        assert_eq!(u.nrows(), self.num_modes, "dimension mismatch");
        let mut t = u.clone();
        self.dft.apply_columns(&mut t, UniformDft::adjoint);
        let f = self.urv.apply_mat(&t);
        match &self.order {
            None => f,
            Some(ord) => scatter_rows(ord, &f),
        }
    }

    /// Adjoint of the fast forward product: `u = F (A F^{-H})^H f`.
    pub fn apply_adjoint(&self, f: &[C64]) -> Vec<C64> {
        assert_eq!(f.len(), self.num_points, "dimension mismatch");
        let mut t = match &self.order {
            None => self.urv.apply_adjoint(f),
            Some(_) => self.urv.apply_adjoint(&self.to_internal(f)),
        };
        self.dft.forward(&mut t);
        t
    }

    /// Batched adjoint product.
    pub fn apply_adjoint_mat(&self, f: &CMat) -> CMat {
        assert_eq!(f.nrows(), self.num_points, "dimension mismatch");
        let mut t = match &self.order {
            None => self.urv.apply_adjoint_mat(f),
            Some(ord) => self.urv.apply_adjoint_mat(&gather_rows(ord, f)),
        };
        self.dft.apply_columns(&mut t, UniformDft::forward);
        t
    }

    /// Least-squares solve `u = argmin ||A u - f||`, via the structured
    /// pseudoinverse `F^{-H} (A F^{-H})^+ f`.
    pub fn pinv_apply(&self, f: &[C64]) -> Result<Vec<C64>, SolverError> {
        if f.len() != self.num_points {
            return Err(UrvError::Dimension {
                what: "right-hand side",
                expected: self.num_points,
                got: f.len(),
            }
            .into());
        }
        let mut u = match &self.order {
            None => self.urv.solve(f)?,
            Some(_) => self.urv.solve(&self.to_internal(f))?,
        };
        self.dft.inverse_adjoint(&mut u);
        Ok(u)
    }

    /// Batched least-squares solve.
    pub fn pinv_apply_mat(&self, f: &CMat) -> Result<CMat, SolverError> {
        let mut u = match &self.order {
            None => self.urv.solve_mat(f)?,
            Some(ord) => {
                if f.nrows() != self.num_points {
                    return Err(UrvError::Dimension {
                        what: "right-hand side",
                        expected: self.num_points,
                        got: f.nrows(),
                    }
                    .into());
                }
                self.urv.solve_mat(&gather_rows(ord, f))?
            }
        };
        self.dft.apply_columns(&mut u, UniformDft::inverse_adjoint);
        Ok(u)
    }

    /// Adjoint of the pseudoinverse, `(A^+)^H u`: needed when sampling
    /// through the solver from the coefficient side.
    pub fn pinv_adjoint_apply(&self, u: &[C64]) -> Result<Vec<C64>, SolverError> {
        if u.len() != self.num_modes {
            return Err(UrvError::Dimension {
                what: "adjoint input",
                expected: self.num_modes,
                got: u.len(),
            }
            .into());
        }
        let mut t = u.to_vec();
        self.dft.inverse(&mut t);
        let w = self.urv.solve_adjoint(&t)?;
        Ok(self.to_caller(w))
    }

    /// Batched pseudoinverse adjoint.
    pub fn pinv_adjoint_apply_mat(&self, u: &CMat) -> Result<CMat, SolverError> {
        let mut t = u.clone();
        self.dft.apply_columns(&mut t, UniformDft::inverse);
        let w = self.urv.solve_adjoint_mat(&t)?;
        Ok(match &self.order {
            None => w,
            Some(ord) => scatter_rows(ord, &w),
        })
    }

    /// Dense reconstruction of the compressed structured factor, for
    /// diagnostics at small sizes. Rows follow the caller's point order.
    pub fn structured_factor_to_dense(&self, cap: usize) -> Result<CMat, SolverError> {
        if self.num_points > cap || self.num_modes > cap {
            return Err(SolverError::TooLarge {
                rows: self.num_points,
                cols: self.num_modes,
                cap,
            });
        }
        let dense = self.urv.apply_mat(&CMat::identity(self.num_modes));
        Ok(match &self.order {
            None => dense,
            Some(ord) => scatter_rows(ord, &dense),
        })
    }
}

/// Call accounting for the randomized recovery of the interpolation
/// factor: the construction makes a fixed number of batched transform
/// applications and structured pseudoinverse column solves.
#[derive(Clone, Copy, Debug)]
pub struct Type3BuildStats {
    /// Batched forward transform applications during sampling.
    pub nufft_forward_batches: usize,
    /// Batched adjoint transform applications during sampling.
    pub nufft_adjoint_batches: usize,
    /// Structured pseudoinverse applications, counted per column.
    pub pinv_columns: usize,
    /// Rank budget `k + 10` used for the interpolation factor.
    pub rank: usize,
    /// Test-matrix columns per side.
    pub samples: usize,
}

/// Direct solver for real frequencies: `A(j, k) = exp(2 pi i x_j w_k)`,
/// factored as `A ≈ B H` with `B` an integer-frequency matrix over the
/// enlarged mode range `-R .. N-1+R` and `H = B^+ A` the rank-structured
/// interpolation factor, both held in factorized form.
pub struct FastType3Solver {
    b: FastType2Solver,
    h_urv: UrvFactorization,
    window: usize,
    rank_parameter: usize,
    frequencies: Vec<f64>,
    stats: Type3BuildStats,
    timings: BuildTimings,
}

/// Builds the real-frequency solver. `rho` controls the integer-frequency
/// factor's accuracy, `k` the rank budget of the interpolation factor,
/// and `window` the number of extra integer modes added on each side of
/// the frequency band (the approximation error bound decays like
/// `1/sqrt(window)`; `window = 0` keeps the factor square).
///
/// The interpolation factor is never formed: it is compressed from
/// `samples` randomized probes, obtained with one batched forward
/// transform, one batched adjoint transform, and `2 * samples` structured
/// pseudoinverse column solves.
pub fn build_type3(
    problem: &NudftProblem,
    rho: f64,
    k: usize,
    window: usize,
    opts: &SolverOptions,
) -> Result<FastType3Solver, SolverError> {
    let m = problem.num_samples();
    let n = problem.num_frequencies();
    let n_prime = n + 2 * window;
    if m < n_prime {
        return Err(SolverError::Underdetermined {
            points: m,
            unknowns: n_prime,
        });
    }
    if k == 0 {
        return Err(SolverError::Rank);
    }

    // The integer-frequency factor over the enlarged mode range.
    let b = build_type2(
        problem.sample_points(),
        n_prime,
        -(window as i64),
        rho,
        opts,
    )?;

    // Sampling budget for the interpolation factor.
    let h_tree = HssTree::new(n_prime, n, opts.leaf_size);
    let rank = k + 10;
    let samples = minimum_samples(&h_tree, rank);
    let h_seed = opts.seed ^ 0xD1B5_4A32_D192_ED03;
    let mut copts = CompressOptions::new(rank, samples, h_seed);
    copts.rank_tolerance = 1e-12;
    let (seed_omega, seed_psi) = sample_seeds(h_seed);

    let plan = Nufft3Plan::new(
        problem.sample_points(),
        problem.frequencies(),
        nufft_tolerance(rho),
    )?;
    let slab = opts.slab.max(1);
    let batch = opts.nufft_slab.unwrap_or(samples).min(samples).max(1);
    let mut pinv_columns = 0usize;
    let mut timings = *b.timings();
    let stage = Instant::now();

    // Forward samples Y = B^+ (A Omega): one batched real-frequency
    // transform, then structured solves slab by slab.
    let mut y = PartitionedRows::for_tree_rows(&h_tree, samples);
    {
        let gauss = GaussianSource::new(seed_omega);
        let mut j0 = 0;
        while j0 < samples {
            let j1 = (j0 + batch).min(samples);
            let t = plan.forward_batch(&gauss.block(0, n, j0, j1));
            let mut c0 = 0;
            while c0 < j1 - j0 {
                let c1 = (c0 + slab).min(j1 - j0);
                let uy = b.pinv_apply_mat(&t.block(0, m, c0, c1))?;
                pinv_columns += c1 - c0;
                for j in c0..c1 {
                    y.set_column(j0 + j, uy.col(j - c0));
                }
                c0 = c1;
            }
            j0 = j1;
        }
    }

    // Adjoint samples Z = A^H ((B^+)^H Psi): structured adjoint solves
    // slab by slab into a staging block, then one batched adjoint
    // transform.
    let mut z = PartitionedRows::for_tree_cols(&h_tree, samples);
    {
        let gauss = GaussianSource::new(seed_psi);
        let mut j0 = 0;
        while j0 < samples {
            let j1 = (j0 + batch).min(samples);
            let mut w = CMat::zeros(m, j1 - j0);
            let mut c0 = 0;
            while c0 < j1 - j0 {
                let c1 = (c0 + slab).min(j1 - j0);
                let wc = b.pinv_adjoint_apply_mat(&gauss.block(0, n_prime, j0 + c0, j0 + c1))?;
                pinv_columns += c1 - c0;
                w.set_block(0, c0, &wc);
                c0 = c1;
            }
            let zc = plan.adjoint_batch(&w);
            drop(w);
            for j in j0..j1 {
                z.set_column(j, zc.col(j - j0));
            }
            j0 = j1;
        }
    }

    timings.interpolation_sampling = stage.elapsed().as_secs_f64();

    let stage = Instant::now();
    let mut omega_src = GaussianRows::new(seed_omega, n, samples);
    let mut psi_src = GaussianRows::new(seed_psi, n_prime, samples);
    let h_hss =
        compress_from_sources(&h_tree, &mut omega_src, &mut y, &mut psi_src, &mut z, &copts)?;
    timings.interpolation_compression = stage.elapsed().as_secs_f64();

    let stage = Instant::now();
    let h_urv = urv_factorize(h_hss)?;
    timings.interpolation_factorization = stage.elapsed().as_secs_f64();
    let stats = Type3BuildStats {
        nufft_forward_batches: plan.forward_batches(),
        nufft_adjoint_batches: plan.adjoint_batches(),
        pinv_columns,
        rank,
        samples,
    };
    Ok(FastType3Solver {
        b,
        h_urv,
        window,
        rank_parameter: k,
        frequencies: problem.frequencies().to_vec(),
        stats,
        timings,
    })
}

impl FastType3Solver {
    /// The integer-frequency factor.
    pub fn b(&self) -> &FastType2Solver {
        &self.b
    }

    /// The factorization of the interpolation factor.
    pub fn h_urv(&self) -> &UrvFactorization {
        &self.h_urv
    }

    pub fn num_points(&self) -> usize {
        self.b.num_points()
    }

    pub fn num_frequencies(&self) -> usize {
        self.frequencies.len()
    }

    /// Extra integer modes added on each side of the frequency band.
    pub fn window(&self) -> usize {
        self.window
    }

    /// Rank parameter `k` of the interpolation factor.
    pub fn rank_parameter(&self) -> usize {
        self.rank_parameter
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    /// Construction call accounting.
    pub fn stats(&self) -> &Type3BuildStats {
        &self.stats
    }

    /// Wall-clock breakdown of the construction, both factors included.
    pub fn timings(&self) -> &BuildTimings {
        &self.timings
    }

    /// Fast forward product `f = B (H u)`.
    pub fn apply(&self, u: &[C64]) -> Vec<C64> {
        assert_eq!(u.len(), self.num_frequencies(), "dimension mismatch");
        let t = self.h_urv.apply(u);
        self.b.apply(&t)
    }

    /// Batched fast forward product.
    pub fn apply_mat(&self, u: &CMat) -> CMat {
        self.b.apply_mat(&self.h_urv.apply_mat(u))
    }

    /// Direct least-squares solve `u = H^+ (B^+ f)`.
    pub fn solve(&self, f: &[C64]) -> Result<Vec<C64>, SolverError> {
        let t = self.b.pinv_apply(f)?;
        Ok(self.h_urv.solve(&t)?)
    }

    /// Batched direct solve.
    pub fn solve_mat(&self, f: &CMat) -> Result<CMat, SolverError> {
        let t = self.b.pinv_apply_mat(f)?;
        Ok(self.h_urv.solve_mat(&t)?)
    }

    /// One application of the normal-equation preconditioner
    /// `P = A_fast^+ (A_fast^+)^H`, Hermitian positive semidefinite.
    pub fn preconditioner_apply(&self, v: &[C64]) -> Result<Vec<C64>, SolverError> {
        assert_eq!(v.len(), self.num_frequencies(), "dimension mismatch");
        let t = self.h_urv.solve_adjoint(v)?;
        let t = self.b.pinv_adjoint_apply(&t)?;
        let t = self.b.pinv_apply(&t)?;
        Ok(self.h_urv.solve(&t)?)
    }

    /// Dense reconstruction of the interpolation factor, for diagnostics
    /// at small sizes.
    pub fn interpolation_factor_to_dense(&self, cap: usize) -> Result<CMat, SolverError> {
        let (rows, cols) = (self.h_urv.num_rows(), self.h_urv.num_cols());
        if rows > cap || cols > cap {
            return Err(SolverError::TooLarge { rows, cols, cap });
        }
        Ok(self.h_urv.apply_mat(&CMat::identity(cols)))
    }
}
