//! Conjugate-gradient iterations on the normal equations.
//!
//! The least-squares problem `min ||A u - f||` is solved through
//! `A^H A u = A^H f`, touching `A` only through forward and adjoint
//! oracles — exactly one call to each per iteration. A preconditioned
//! variant accepts an approximate inverse of `A^H A` (for example the
//! fast solvers' [`preconditioner_apply`]); the preconditioner must
//! behave as a Hermitian positive semidefinite map, which is monitored
//! from the quadratic forms the recurrence computes anyway.
//!
//! [`preconditioner_apply`]: crate::inudft::FastType3Solver::preconditioner_apply

use crate::dense::{axpy, dot, vec_norm, C64};
use std::time::Instant;
use thiserror::Error;

/// Stopping tolerance on the relative normal-equation residual.
pub const DEFAULT_TOLERANCE: f64 = 1e-12;
/// Iteration cap.
pub const DEFAULT_MAX_ITERATIONS: usize = 500;

/// Errors from the preconditioned iteration.
#[derive(Debug, Error)]
pub enum IterativeError {
    /// The preconditioner produced `<P r, r>` with a significant imaginary
    /// part, so it is not behaving as a Hermitian map.
    #[error(
        "preconditioner is not Hermitian: Im<P r, r> = {imag:.3e} exceeds {limit:.3e} at iteration {iteration}"
    )]
    NonHermitianPreconditioner {
        imag: f64,
        limit: f64,
        iteration: usize,
    },
}

/// Outcome of a normal-equation CG/PCG run.
///
/// Oracle-call accounting: a run makes `iterations + 1` adjoint calls
/// (one to form the normal-equation right-hand side), `iterations + 1`
/// forward calls (one to evaluate the final solution-space residual),
/// and — when preconditioned — exactly one preconditioner call per
/// iteration (the first on the initial residual).
#[derive(Clone, Debug)]
pub struct IterationReport {
    /// Iterations performed.
    pub iterations: usize,
    /// Whether the tolerance was reached within the iteration cap.
    pub converged: bool,
    /// `||A^H A u - A^H f|| / ||A^H f||` after each iteration.
    pub relative_residual_history: Vec<f64>,
    /// `||A u - f|| / ||f||` at the final iterate.
    pub final_solution_residual: f64,
    /// Seconds spent before the loop (right-hand side and initial maps).
    pub setup_seconds: f64,
    /// Seconds spent in the iteration loop.
    pub iteration_seconds: f64,
}

fn zeros(n: usize) -> Vec<C64> {
    vec![C64::new(0.0, 0.0); n]
}

/// Conjugate gradient on the normal equations `A^H A u = A^H f`.
///
/// `forward` maps coefficients to samples, `adjoint` the reverse; the
/// iteration stops when the relative normal-equation residual drops to
/// `tol` or after `maxit` iterations (non-convergence is reported, not
/// an error). A zero right-hand side returns immediately.
pub fn cg_normal(
    forward: &mut dyn FnMut(&[C64]) -> Vec<C64>,
    adjoint: &mut dyn FnMut(&[C64]) -> Vec<C64>,
    f: &[C64],
    tol: f64,
    maxit: usize,
) -> (Vec<C64>, IterationReport) {
    assert!(tol > 0.0, "tolerance must be positive");
    assert!(maxit >= 1, "iteration cap must be at least 1");
    run(forward, adjoint, None, f, tol, maxit).expect("unpreconditioned CG cannot fail")
}

/// Preconditioned conjugate gradient on the normal equations, with
/// `precond` applying an approximate inverse of `A^H A`.
///
/// Fails if the preconditioner stops behaving as a Hermitian map
/// (imaginary part of `<P r, r>` beyond `1e-8 ||r||^2`).
pub fn pcg_normal(
    forward: &mut dyn FnMut(&[C64]) -> Vec<C64>,
    adjoint: &mut dyn FnMut(&[C64]) -> Vec<C64>,
    precond: &mut dyn FnMut(&[C64]) -> Vec<C64>,
    f: &[C64],
    tol: f64,
    maxit: usize,
) -> Result<(Vec<C64>, IterationReport), IterativeError> {
    assert!(tol > 0.0, "tolerance must be positive");
    assert!(maxit >= 1, "iteration cap must be at least 1");
    run(forward, adjoint, Some(precond), f, tol, maxit)
}

fn run(
    forward: &mut dyn FnMut(&[C64]) -> Vec<C64>,
    adjoint: &mut dyn FnMut(&[C64]) -> Vec<C64>,
    mut precond: Option<&mut dyn FnMut(&[C64]) -> Vec<C64>>,
    f: &[C64],
    tol: f64,
    maxit: usize,
) -> Result<(Vec<C64>, IterationReport), IterativeError> {
    let setup_start = Instant::now();
    let fnorm = vec_norm(f);
    let b = adjoint(f);
    let n = b.len();
    let bnorm = vec_norm(&b);
    if bnorm == 0.0 {
        // u = 0 already minimizes ||A u - f||.
        let setup_seconds = setup_start.elapsed().as_secs_f64();
        return Ok((
            zeros(n),
            IterationReport {
                iterations: 0,
                converged: true,
                relative_residual_history: Vec::new(),
                final_solution_residual: if fnorm == 0.0 { 0.0 } else { 1.0 },
                setup_seconds,
                iteration_seconds: 0.0,
            },
        ));
    }

    let mut u = zeros(n);
    let mut r = b;
    let mut z = match precond.as_deref_mut() {
        Some(p) => p(&r),
        None => r.clone(),
    };
    // rz = <r, z>; for a Hermitian positive preconditioner this quadratic
    // form is real and nonnegative, which is checked each application.
    let mut rz = quadratic_form(&r, &z, 0, precond.is_some())?;
    let mut p = z.clone();
    let setup_seconds = setup_start.elapsed().as_secs_f64();

    let iter_start = Instant::now();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    loop {
        if iterations > 0 {
            z = match precond.as_deref_mut() {
                Some(pc) => pc(&r),
                None => r.clone(),
            };
            let rz_next = quadratic_form(&r, &z, iterations, precond.is_some())?;
            let beta = C64::new(rz_next / rz, 0.0);
            rz = rz_next;
            for (pi, zi) in p.iter_mut().zip(&z) {
                *pi = zi + beta * *pi;
            }
        }
        iterations += 1;
        let w = adjoint(&forward(&p));
        let pw = dot(&p, &w).re;
        if pw <= 0.0 || !pw.is_finite() {
            // The Krylov space is exhausted (or the operator degenerate);
            // no further progress is possible.
            history.push(vec_norm(&r) / bnorm);
            break;
        }
        let alpha = C64::new(rz / pw, 0.0);
        axpy(&mut u, alpha, &p);
        axpy(&mut r, -alpha, &w);
        let rel = vec_norm(&r) / bnorm;
        history.push(rel);
        if rel <= tol {
            converged = true;
            break;
        }
        if iterations >= maxit {
            break;
        }
    }

    let residual = forward(&u);
    let num: f64 = residual
        .iter()
        .zip(f)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt();
    let final_solution_residual = if fnorm == 0.0 { 0.0 } else { num / fnorm };
    let iteration_seconds = iter_start.elapsed().as_secs_f64();
    Ok((
        u,
        IterationReport {
            iterations,
            converged,
            relative_residual_history: history,
            final_solution_residual,
            setup_seconds,
            iteration_seconds,
        },
    ))
}

fn quadratic_form(
    r: &[C64],
    z: &[C64],
    iteration: usize,
    preconditioned: bool,
) -> Result<f64, IterativeError> {
    let q = dot(r, z);
    if preconditioned {
        let limit = 1e-8 * vec_norm(r).powi(2);
        if q.im.abs() > limit {
            return Err(IterativeError::NonHermitianPreconditioner {
                imag: q.im,
                limit,
                iteration,
            });
        }
    }
    Ok(q.re)
}
