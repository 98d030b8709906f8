//! The experiments behind the `nudft` subcommands, plus the randomized
//! relative-error estimator they share.
//!
//! Each experiment consumes a resolved [`ExperimentConfig`] and returns
//! typed rows holding full-precision values; the `*_table` converters
//! render those rows as CSV. Running from the same configuration and
//! seeds reproduces the same rows bit for bit.

use std::time::Instant;

use nudft_core::dense::{singular_values, vec_norm};
use nudft_core::inudft::{build_type2, build_type3, SolverOptions};
use nudft_core::iterative::{cg_normal, pcg_normal};
use nudft_core::problem::{
    dense_integer_forward, truncation_bound_frobenius, InstanceParams, NudftProblem,
};
use nudft_core::rng::SeededRng;
use nudft_core::transforms::Nufft3Plan;
use nudft_core::{C64, CMat};

use crate::config::{CaseKind, ExperimentConfig};
use crate::output::{format_count, format_number, format_optional, Table};
use crate::CliError;

/// Random streams: instance generation uses streams 1 and 2, estimator
/// probes stream 3, right-hand sides stream 4.
pub const PROBE_STREAM: u64 = 3;
/// Stream drawing the coefficient vectors behind consistent right-hand
/// sides in the solve experiments.
pub const RHS_STREAM: u64 = 4;

/// Relative cutoff defining the numerical rank in [`rank_probe`].
pub const RANK_EPSILON: f64 = 1e-7;

/// Tolerance of the fast transforms used as reference operators in the
/// timing and iteration experiments, far below every error they measure.
const REFERENCE_NUFFT_TOL: f64 = 1e-13;

/// Above this sample count the solver streams its sampling transforms in
/// slabs to keep the memory profile flat.
const NUFFT_SLAB_THRESHOLD: usize = 400_000;
const NUFFT_SLAB_WIDTH: usize = 64;

/// Sampling-transform slab width for an instance with `m` sample points:
/// unbatched below the streaming threshold, a flat slab above it.
pub fn nufft_slab_for(m: usize) -> Option<usize> {
    (m >= NUFFT_SLAB_THRESHOLD).then_some(NUFFT_SLAB_WIDTH)
}

/// Construction knobs for an instance with `m` sample points.
pub fn solver_options(cfg: &ExperimentConfig, seed: u64, m: usize) -> SolverOptions {
    SolverOptions {
        leaf_size: cfg.leaf_size,
        seed,
        slab: 64,
        nufft_slab: nufft_slab_for(m),
    }
}

/// Randomized estimate of the relative Frobenius distance between two
/// linear maps: `sqrt(sum ||(A - A')g_i||^2 / sum ||A g_i||^2)` over
/// `n_probes` standard complex Gaussian probes of length `n`.
///
/// The probe sequence is a pure function of `seed`, so repeated calls
/// with the same seed compare against identical probes.
pub fn estimate_relative_frobenius_error(
    apply_exact: &mut dyn FnMut(&[C64]) -> Vec<C64>,
    apply_fast: &mut dyn FnMut(&[C64]) -> Vec<C64>,
    n: usize,
    n_probes: usize,
    seed: u64,
) -> f64 {
    let mut rng = SeededRng::with_stream(seed, PROBE_STREAM);
    let mut num = 0.0;
    let mut den = 0.0;
    for _ in 0..n_probes {
        let g = rng.complex_vector(n);
        let exact = apply_exact(&g);
        let fast = apply_fast(&g);
        assert_eq!(exact.len(), fast.len(), "operator output sizes differ");
        num += exact
            .iter()
            .zip(&fast)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>();
        den += exact.iter().map(|a| a.norm_sqr()).sum::<f64>();
    }
    if den == 0.0 {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (num / den).sqrt()
}

/// Draws the problem instance for one experiment cell: `m_ratio * n`
/// sample points from the case's point family and `n` jittered integer
/// frequencies, both determined by `seed`.
pub fn generate_instance(
    cfg: &ExperimentConfig,
    case: CaseKind,
    n: usize,
    alpha: f64,
    seed: u64,
) -> Result<NudftProblem, CliError> {
    Ok(NudftProblem::generate(
        cfg.m_ratio * n,
        n,
        InstanceParams {
            distribution: case.distribution(),
            alpha,
            beta: cfg.beta,
            seed,
        },
    )?)
}

/// Median of a list; the average of the middle pair for even lengths.
pub fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// `||a - b|| / ||b||`, with the zero-over-zero case reading as zero.
pub fn relative_distance(a: &[C64], b: &[C64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt();
    let scale = vec_norm(b);
    if scale == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / scale
    }
}

/// One averaged cell of the window-truncation error sweep.
#[derive(Clone, Debug)]
pub struct ApproxErrorRow {
    pub alpha: f64,
    pub window: usize,
    /// Estimated relative Frobenius error of the fast apply, averaged
    /// over the configured seeds.
    pub mean_error: f64,
    /// Frobenius tail bound for this window; absent when the window is
    /// too narrow for the bound to apply.
    pub bound: Option<f64>,
}

/// Relative error of the fast forward apply against the dense transform,
/// swept over frequency jitter and expansion window width.
pub fn approx_error(cfg: &ExperimentConfig) -> Result<Vec<ApproxErrorRow>, CliError> {
    let case = cfg.cases[0];
    let n = cfg.n_list[0];
    let rho = cfg.rho_list[0];
    let k = cfg.k_for(n);
    let mut rows = Vec::new();
    for &alpha in &cfg.alpha_list {
        for &window in &cfg.window_list {
            let mut total = 0.0;
            for &seed in &cfg.seeds {
                let problem = generate_instance(cfg, case, n, alpha, seed)?;
                let opts = solver_options(cfg, seed, problem.num_samples());
                let solver = build_type3(&problem, rho, k, window, &opts)?;
                let mut exact = |g: &[C64]| problem.dense_forward(g);
                let mut fast = |g: &[C64]| solver.apply(g);
                total += estimate_relative_frobenius_error(
                    &mut exact,
                    &mut fast,
                    n,
                    cfg.probes,
                    seed,
                );
            }
            rows.push(ApproxErrorRow {
                alpha,
                window,
                mean_error: total / cfg.seeds.len() as f64,
                bound: truncation_bound_frobenius(window).ok(),
            });
        }
    }
    Ok(rows)
}

/// CSV rendering of [`approx_error`] rows.
pub fn approx_error_table(rows: &[ApproxErrorRow]) -> Table {
    let mut table = Table::new(vec!["alpha", "R", "mean_err", "bound"]);
    for row in rows {
        table.push(vec![
            format_number(row.alpha),
            row.window.to_string(),
            format_number(row.mean_error),
            format_optional(row.bound),
        ]);
    }
    table
}

/// One timing-and-residual cell of the direct-solver sweep. Every timed
/// field is the median over the configured repeats.
#[derive(Clone, Debug)]
pub struct DirectSolveRow {
    pub case: CaseKind,
    pub n: usize,
    pub alpha: f64,
    /// Sampling plus compression, both factors, seconds.
    pub t_construction: f64,
    /// Structured factorization, both factors, seconds.
    pub t_factorization: f64,
    /// One structured solve, seconds.
    pub t_solve: f64,
    /// Relative residual against a consistent right-hand side.
    pub residual: f64,
    /// Breakdown: integer-mode factor sampling plus compression.
    pub t2_build: f64,
    /// Breakdown: integer-mode factor factorization.
    pub t2_urv: f64,
    /// Breakdown: interpolation factor sampling plus compression.
    pub blackbox: f64,
}

/// Build the structured solver across cases, sizes, and jitters; report
/// stage timings and the residual of one consistent solve.
pub fn direct_solve(cfg: &ExperimentConfig) -> Result<Vec<DirectSolveRow>, CliError> {
    let rho = cfg.rho_list[0];
    let window = cfg.window_list[0];
    let seed = cfg.seeds[0];
    let mut rows = Vec::new();
    for &case in &cfg.cases {
        for &n in &cfg.n_list {
            for &alpha in &cfg.alpha_list {
                let problem = generate_instance(cfg, case, n, alpha, seed)?;
                let m = problem.num_samples();
                let plan = Nufft3Plan::new(
                    problem.sample_points(),
                    problem.frequencies(),
                    REFERENCE_NUFFT_TOL,
                )?;
                let u0 = SeededRng::with_stream(seed, RHS_STREAM).complex_vector(n);
                let f = plan.forward(&u0);

                let mut t_construction = Vec::new();
                let mut t_factorization = Vec::new();
                let mut t_solve = Vec::new();
                let mut t2_build = Vec::new();
                let mut t2_urv = Vec::new();
                let mut blackbox = Vec::new();
                let mut residual = 0.0;
                for _ in 0..cfg.repeats {
                    let opts = solver_options(cfg, seed, m);
                    let solver = build_type3(&problem, rho, cfg.k_for(n), window, &opts)?;
                    let timings = *solver.timings();
                    t_construction.push(timings.construction());
                    t_factorization.push(timings.factorization());
                    t2_build.push(timings.type2_sampling + timings.type2_compression);
                    t2_urv.push(timings.type2_factorization);
                    blackbox
                        .push(timings.interpolation_sampling + timings.interpolation_compression);
                    let start = Instant::now();
                    let u = solver.solve(&f)?;
                    t_solve.push(start.elapsed().as_secs_f64());
                    residual = relative_distance(&plan.forward(&u), &f);
                }
                rows.push(DirectSolveRow {
                    case,
                    n,
                    alpha,
                    t_construction: median(t_construction),
                    t_factorization: median(t_factorization),
                    t_solve: median(t_solve),
                    residual,
                    t2_build: median(t2_build),
                    t2_urv: median(t2_urv),
                    blackbox: median(blackbox),
                });
            }
        }
    }
    Ok(rows)
}

/// CSV rendering of [`direct_solve`] rows.
pub fn direct_solve_table(rows: &[DirectSolveRow]) -> Table {
    let mut table = Table::new(vec![
        "case", "N", "alpha", "t_c", "t_f", "t_s", "r_s", "t2_build", "t2_urv", "blackbox",
    ]);
    for row in rows {
        table.push(vec![
            row.case.label().to_string(),
            row.n.to_string(),
            format_number(row.alpha),
            format_number(row.t_construction),
            format_number(row.t_factorization),
            format_number(row.t_solve),
            format_number(row.residual),
            format_number(row.t2_build),
            format_number(row.t2_urv),
            format_number(row.blackbox),
        ]);
    }
    table
}

/// One iterative run (plain or preconditioned) on one instance.
#[derive(Clone, Debug)]
pub struct IterativeRow {
    /// `"cg"` or `"pcg"`.
    pub method: &'static str,
    pub case: CaseKind,
    pub n: usize,
    pub alpha: f64,
    /// Setup seconds: right-hand-side preparation, plus preconditioner
    /// construction for the preconditioned method.
    pub t_pre: f64,
    /// Seconds spent iterating.
    pub t_iter: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Relative residual of the final iterate.
    pub residual: f64,
}

/// Compare plain and preconditioned conjugate gradients on the normal
/// equations across cases, sizes, and jitters.
pub fn iterative_compare(cfg: &ExperimentConfig) -> Result<Vec<IterativeRow>, CliError> {
    let rho = cfg.rho_list[0];
    let window = cfg.window_list[0];
    let seed = cfg.seeds[0];
    let mut rows = Vec::new();
    for &case in &cfg.cases {
        for &n in &cfg.n_list {
            for &alpha in &cfg.alpha_list {
                let problem = generate_instance(cfg, case, n, alpha, seed)?;
                let m = problem.num_samples();
                let plan = Nufft3Plan::new(
                    problem.sample_points(),
                    problem.frequencies(),
                    REFERENCE_NUFFT_TOL,
                )?;
                let u0 = SeededRng::with_stream(seed, RHS_STREAM).complex_vector(n);
                let f = plan.forward(&u0);

                let mut forward = |u: &[C64]| plan.forward(u);
                let mut adjoint = |v: &[C64]| plan.adjoint(v);
                let (_, report) =
                    cg_normal(&mut forward, &mut adjoint, &f, cfg.tolerance, cfg.max_iterations);
                rows.push(IterativeRow {
                    method: "cg",
                    case,
                    n,
                    alpha,
                    t_pre: report.setup_seconds,
                    t_iter: report.iteration_seconds,
                    iterations: report.iterations,
                    converged: report.converged,
                    residual: report.final_solution_residual,
                });

                let build_start = Instant::now();
                let opts = solver_options(cfg, seed, m);
                let solver = build_type3(&problem, rho, cfg.k_for(n), window, &opts)?;
                let t_build = build_start.elapsed().as_secs_f64();
                let mut forward = |u: &[C64]| plan.forward(u);
                let mut adjoint = |v: &[C64]| plan.adjoint(v);
                let mut precond = |v: &[C64]| {
                    solver
                        .preconditioner_apply(v)
                        .expect("preconditioner application failed")
                };
                let (_, report) = pcg_normal(
                    &mut forward,
                    &mut adjoint,
                    &mut precond,
                    &f,
                    cfg.tolerance,
                    cfg.max_iterations,
                )?;
                rows.push(IterativeRow {
                    method: "pcg",
                    case,
                    n,
                    alpha,
                    t_pre: t_build + report.setup_seconds,
                    t_iter: report.iteration_seconds,
                    iterations: report.iterations,
                    converged: report.converged,
                    residual: report.final_solution_residual,
                });
            }
        }
    }
    Ok(rows)
}

/// CSV rendering of [`iterative_compare`] rows. A run that did not
/// converge keeps its timing columns but leaves `n_iter` and `r_s`
/// empty, with `converged=false` marking the failure.
pub fn iterative_compare_table(rows: &[IterativeRow]) -> Table {
    let mut table = Table::new(vec![
        "method",
        "case",
        "N",
        "alpha",
        "t_pre",
        "t_iter",
        "n_iter",
        "r_s",
        "converged",
    ]);
    for row in rows {
        table.push(vec![
            row.method.to_string(),
            row.case.label().to_string(),
            row.n.to_string(),
            format_number(row.alpha),
            format_number(row.t_pre),
            format_number(row.t_iter),
            format_count(row.converged.then_some(row.iterations)),
            format_optional(row.converged.then_some(row.residual)),
            row.converged.to_string(),
        ]);
    }
    table
}

/// Numerical rank of one off-diagonal block of the interpolation map.
#[derive(Clone, Debug)]
pub struct RankProbeRow {
    pub n: usize,
    pub alpha: f64,
    /// Block singular values above `RANK_EPSILON` times the map scale.
    pub eps_rank: usize,
    /// Largest singular value of the probed block.
    pub sigma_max: f64,
}

/// Probe the top-right `N/2 x N/2` block of the interpolation map (the
/// integer-mode pseudoinverse applied to each dense transform column)
/// and record its numerical rank: block singular values above
/// [`RANK_EPSILON`] times the map's largest singular value, the latter
/// estimated by power iteration so that a numerically zero block counts
/// as rank zero rather than as noise.
pub fn rank_probe(cfg: &ExperimentConfig) -> Result<Vec<RankProbeRow>, CliError> {
    let case = cfg.cases[0];
    let rho = cfg.rho_list[0];
    let window = cfg.window_list[0];
    let seed = cfg.seeds[0];
    let mut rows = Vec::new();
    for &n in &cfg.n_list {
        for &alpha in &cfg.alpha_list {
            let problem = generate_instance(cfg, case, n, alpha, seed)?;
            let opts = solver_options(cfg, seed, problem.num_samples());
            let b = build_type2(
                problem.sample_points(),
                n + 2 * window,
                -(window as i64),
                rho,
                &opts,
            )?;
            let half = n / 2;
            let mut block = CMat::zeros(half, half);
            for (col, k) in ((n - half)..n).enumerate() {
                let u = b.pinv_apply(&problem.matrix_column(k))?;
                for (i, &v) in u.iter().take(half).enumerate() {
                    block.set(i, col, v);
                }
            }

            // Map scale: a few rounds of power iteration on the normal
            // map of the full interpolation operator.
            let mut v = SeededRng::with_stream(seed, PROBE_STREAM).complex_vector(n);
            let norm = vec_norm(&v);
            v.iter_mut().for_each(|c| *c /= norm);
            let mut scale = 0.0;
            for _ in 0..6 {
                let w = b.pinv_apply(&problem.dense_forward(&v))?;
                scale = vec_norm(&w);
                if scale == 0.0 {
                    break;
                }
                let mut t = problem.dense_adjoint(&b.pinv_adjoint_apply(&w)?);
                let tnorm = vec_norm(&t);
                if tnorm == 0.0 {
                    break;
                }
                t.iter_mut().for_each(|c| *c /= tnorm);
                v = t;
            }

            let sv = singular_values(&block);
            let sigma_max = sv.first().copied().unwrap_or(0.0);
            let cutoff = RANK_EPSILON * scale.max(f64::MIN_POSITIVE);
            let eps_rank = sv.iter().filter(|&&s| s > cutoff).count();
            rows.push(RankProbeRow {
                n,
                alpha,
                eps_rank,
                sigma_max,
            });
        }
    }
    Ok(rows)
}

/// CSV rendering of [`rank_probe`] rows.
pub fn rank_probe_table(rows: &[RankProbeRow]) -> Table {
    let mut table = Table::new(vec!["N", "alpha", "eps_rank", "sigma_max"]);
    for row in rows {
        table.push(vec![
            row.n.to_string(),
            format_number(row.alpha),
            row.eps_rank.to_string(),
            format_number(row.sigma_max),
        ]);
    }
    table
}

/// Per-factor error split for one (jitter, tolerance) pair.
#[derive(Clone, Debug)]
pub struct ErrorDecompositionRow {
    pub alpha: f64,
    pub rho: f64,
    /// Integer-mode factor against its dense counterpart.
    pub e_integer: f64,
    /// Interpolation factor against the pseudoinverse-sampled map.
    pub e_interpolation: f64,
    /// End-to-end fast apply against the dense transform.
    pub e_total: f64,
}

/// Split the fast-apply error into its two factor contributions across
/// compression tolerances and jitter amplitudes.
pub fn error_decomposition(cfg: &ExperimentConfig) -> Result<Vec<ErrorDecompositionRow>, CliError> {
    let case = cfg.cases[0];
    let n = cfg.n_list[0];
    let window = cfg.window_list[0];
    let k = cfg.k_for(n);
    let seed = cfg.seeds[0];
    let offset = -(window as i64);
    let mut rows = Vec::new();
    for &alpha in &cfg.alpha_list {
        for &rho in &cfg.rho_list {
            let problem = generate_instance(cfg, case, n, alpha, seed)?;
            let opts = solver_options(cfg, seed, problem.num_samples());
            let solver = build_type3(&problem, rho, k, window, &opts)?;
            let b = solver.b();

            let points = problem.sample_points();
            let mut exact_b = |g: &[C64]| dense_integer_forward(points, offset, g);
            let mut fast_b = |g: &[C64]| b.apply(g);
            let e_integer = estimate_relative_frobenius_error(
                &mut exact_b,
                &mut fast_b,
                n + 2 * window,
                cfg.probes,
                seed,
            );

            let mut exact_h = |g: &[C64]| {
                b.pinv_apply(&problem.dense_forward(g))
                    .expect("pseudoinverse application failed")
            };
            let mut fast_h = |g: &[C64]| solver.h_urv().apply(g);
            let e_interpolation = estimate_relative_frobenius_error(
                &mut exact_h,
                &mut fast_h,
                n,
                cfg.probes,
                seed,
            );

            let mut exact_a = |g: &[C64]| problem.dense_forward(g);
            let mut fast_a = |g: &[C64]| solver.apply(g);
            let e_total = estimate_relative_frobenius_error(
                &mut exact_a,
                &mut fast_a,
                n,
                cfg.probes,
                seed,
            );

            rows.push(ErrorDecompositionRow {
                alpha,
                rho,
                e_integer,
                e_interpolation,
                e_total,
            });
        }
    }
    Ok(rows)
}

/// CSV rendering of [`error_decomposition`] rows.
pub fn error_decomposition_table(rows: &[ErrorDecompositionRow]) -> Table {
    let mut table = Table::new(vec!["alpha", "rho", "e_B", "e_H", "e_A"]);
    for row in rows {
        table.push(vec![
            format_number(row.alpha),
            format_number(row.rho),
            format_number(row.e_integer),
            format_number(row.e_interpolation),
            format_number(row.e_total),
        ]);
    }
    table
}

/// Run the configured experiment and render its CSV table.
pub fn run(cfg: &ExperimentConfig) -> Result<Table, CliError> {
    use crate::config::ExperimentKind::*;
    Ok(match cfg.kind {
        ApproxError => approx_error_table(&approx_error(cfg)?),
        DirectSolve => direct_solve_table(&direct_solve(cfg)?),
        IterativeCompare => iterative_compare_table(&iterative_compare(cfg)?),
        RankProbe => rank_probe_table(&rank_probe(cfg)?),
        ErrorDecomposition => error_decomposition_table(&error_decomposition(cfg)?),
    })
}
