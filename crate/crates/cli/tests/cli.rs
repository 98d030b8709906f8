//! End-to-end tests of the experiment driver: configuration layering,
//! the randomized error estimator, experiment rows and their CSV
//! encoding, the solve file formats, and the compiled binary.

use std::path::PathBuf;
use std::process::Command;

use nudft_cli::config::{self, CaseKind, ConfigError, ExperimentConfig, ExperimentKind, Overrides};
use nudft_cli::experiments::{self, estimate_relative_frobenius_error};
use nudft_cli::output::{format_number, format_optional, resolve_output, OUTPUT_DIR_VAR};
use nudft_cli::solve_io::{self, SolveInput, SolveOptions};
use nudft_core::inudft::{build_type3, SolverOptions};
use nudft_core::problem::{truncation_bound_frobenius, InstanceParams, NudftProblem,
    PointDistribution};
use nudft_core::rng::{GaussianSource, SeededRng};
use nudft_core::{C64, CMat};

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("nudft-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn rel_err(a: &[C64], b: &[C64]) -> f64 {
    let num = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt();
    let den = b.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    num / den
}

fn consistent_instance(m: usize, n: usize, seed: u64) -> (NudftProblem, Vec<C64>, Vec<C64>) {
    let problem = NudftProblem::generate(
        m,
        n,
        InstanceParams {
            distribution: PointDistribution::PerturbedEquispaced,
            alpha: 0.1,
            beta: 0.4,
            seed,
        },
    )
    .unwrap();
    let u = SeededRng::with_stream(seed, 9).complex_vector(n);
    let f = problem.dense_forward(&u);
    (problem, u, f)
}

#[test]
fn defaults_differ_per_experiment() {
    let approx = ExperimentConfig::for_kind(ExperimentKind::ApproxError);
    assert_eq!(approx.n_list, vec![1024]);
    assert_eq!(approx.window_list, vec![0, 16, 32, 64, 128]);
    assert_eq!(approx.seeds.len(), 5);
    assert_eq!(approx.rho_list, vec![1e-7]);

    let direct = ExperimentConfig::for_kind(ExperimentKind::DirectSolve);
    assert_eq!(direct.cases, vec![CaseKind::Perturbed, CaseKind::Random]);
    assert_eq!(direct.rho_list, vec![1e-12]);

    let rank = ExperimentConfig::for_kind(ExperimentKind::RankProbe);
    assert_eq!(rank.n_list, vec![256, 512, 1024, 2048, 4096]);
    assert_eq!(rank.alpha_list, vec![0.4]);

    let decomp = ExperimentConfig::for_kind(ExperimentKind::ErrorDecomposition);
    assert_eq!(decomp.rho_list, vec![1e-12, 1e-7, 1e-4]);

    for kind in [
        ExperimentKind::ApproxError,
        ExperimentKind::DirectSolve,
        ExperimentKind::IterativeCompare,
        ExperimentKind::RankProbe,
        ExperimentKind::ErrorDecomposition,
    ] {
        let cfg = ExperimentConfig::for_kind(kind);
        assert_eq!(cfg.m_ratio, 4);
        assert_eq!(cfg.beta, 0.4);
        assert_eq!(cfg.leaf_size, 128);
        assert_eq!(cfg.tolerance, 1e-12);
        assert_eq!(cfg.max_iterations, 500);
        assert_eq!(cfg.probes, 30);
        assert_eq!(cfg.repeats, 1);
        assert_eq!(cfg.threads, 1);
        assert!(!cfg.full);
        cfg.validate().unwrap();
    }
}

#[test]
fn config_file_layers_under_flags() {
    let dir = temp_dir("config");
    let path = dir.join("run.cfg");
    std::fs::write(
        &path,
        "# sweep setup\nn_list = 128, 256\nalpha = 0.1\nrho = 1e-7\ncases = perturbed\nfull = true\n",
    )
    .unwrap();
    let file = Overrides::from_file(&path).unwrap();
    let cli = Overrides {
        alpha_list: Some(vec![0.2]),
        seeds: Some(vec![9]),
        ..Overrides::default()
    };
    let cfg = config::resolve(ExperimentKind::DirectSolve, Some(file), cli).unwrap();
    assert_eq!(cfg.n_list, vec![128, 256]);
    assert_eq!(cfg.alpha_list, vec![0.2], "flag must override the file");
    assert_eq!(cfg.rho_list, vec![1e-7]);
    assert_eq!(cfg.cases, vec![CaseKind::Perturbed]);
    assert!(cfg.full);
    assert_eq!(cfg.seeds, vec![9]);
    assert_eq!(cfg.m_ratio, 4, "untouched fields keep their defaults");
}

#[test]
fn config_errors_are_specific() {
    let dir = temp_dir("config-err");
    let bad_key = dir.join("bad_key.cfg");
    std::fs::write(&bad_key, "waveform = 3\n").unwrap();
    assert!(matches!(
        Overrides::from_file(&bad_key),
        Err(ConfigError::UnknownKey { .. })
    ));

    let bad_value = dir.join("bad_value.cfg");
    std::fs::write(&bad_value, "alpha = goose\n").unwrap();
    assert!(matches!(
        Overrides::from_file(&bad_value),
        Err(ConfigError::Value { .. })
    ));

    let bad_line = dir.join("bad_line.cfg");
    std::fs::write(&bad_line, "n_list 4\n").unwrap();
    assert!(matches!(
        Overrides::from_file(&bad_line),
        Err(ConfigError::Syntax { line: 1, .. })
    ));

    let mut cfg = ExperimentConfig::for_kind(ExperimentKind::DirectSolve);
    cfg.alpha_list = vec![0.6];
    assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));

    let mut cfg = ExperimentConfig::for_kind(ExperimentKind::DirectSolve);
    cfg.n_list = vec![1 << 17];
    assert!(matches!(cfg.validate(), Err(ConfigError::SizeCap { .. })));
    cfg.full = true;
    cfg.validate().expect("the cap lifts with full");
}

#[test]
fn rank_rule_rounds_up() {
    let cfg = ExperimentConfig::for_kind(ExperimentKind::DirectSolve);
    assert_eq!(cfg.k_for(1024), 50);
    assert_eq!(cfg.k_for(4096), 60);
    let mut custom = cfg;
    custom.k_factor = 2.5;
    assert_eq!(custom.k_for(512), 23);
}

#[test]
fn numbers_render_with_four_significant_digits() {
    assert_eq!(format_number(0.000123456), "1.235e-4");
    assert_eq!(format_number(12345.6), "1.235e4");
    assert_eq!(format_number(1.0), "1.000e0");
    assert_eq!(format_optional(None), "");
    assert_eq!(format_optional(Some(0.25)), "2.500e-1");
}

#[test]
fn output_dir_variable_resolves_relative_paths() {
    let dir = temp_dir("outdir");
    std::env::set_var(OUTPUT_DIR_VAR, &dir);
    assert_eq!(
        resolve_output(&PathBuf::from("sweep.csv")),
        dir.join("sweep.csv")
    );
    let absolute = dir.join("abs.csv");
    assert_eq!(resolve_output(&absolute), absolute);
    std::env::remove_var(OUTPUT_DIR_VAR);
    assert_eq!(
        resolve_output(&PathBuf::from("sweep.csv")),
        PathBuf::from("sweep.csv")
    );
}

#[test]
fn estimator_is_zero_for_identical_operators() {
    let a = GaussianSource::new(5).matrix(48, 24);
    let mut first = |g: &[C64]| a.matvec(g);
    let mut second = |g: &[C64]| a.matvec(g);
    let est = estimate_relative_frobenius_error(&mut first, &mut second, 24, 10, 3);
    assert_eq!(est, 0.0);
}

#[test]
fn estimator_matches_a_known_dense_perturbation() {
    let a = GaussianSource::new(5).matrix(64, 32);
    let e = GaussianSource::new(6).matrix(64, 32);
    let scale = 1e-3;
    let perturbed = CMat::from_fn(64, 32, |i, j| a.get(i, j) + scale * e.get(i, j));
    let truth = scale * e.fro_norm() / a.fro_norm();

    let mut exact = |g: &[C64]| a.matvec(g);
    let mut fast = |g: &[C64]| perturbed.matvec(g);
    let est = estimate_relative_frobenius_error(&mut exact, &mut fast, 32, 30, 7);
    assert!(
        (est / truth - 1.0).abs() <= 0.15,
        "estimate {est} too far from the dense truth {truth}"
    );
}

#[test]
fn estimator_is_stable_across_probe_seeds() {
    let (m, n) = (4096, 1024);
    let problem = NudftProblem::generate(
        m,
        n,
        InstanceParams {
            distribution: PointDistribution::RandomPoints,
            alpha: 0.4,
            beta: 0.4,
            seed: 1,
        },
    )
    .unwrap();
    let solver = build_type3(&problem, 1e-7, 50, 0, &SolverOptions::default()).unwrap();
    let mut estimates = Vec::new();
    for seed in 101..106 {
        let mut exact = |g: &[C64]| problem.dense_forward(g);
        let mut fast = |g: &[C64]| solver.apply(g);
        estimates.push(estimate_relative_frobenius_error(
            &mut exact,
            &mut fast,
            n,
            30,
            seed,
        ));
    }
    let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
    for est in &estimates {
        assert!(
            (est / mean - 1.0).abs() <= 0.2,
            "estimate {est} strays more than 20% from the mean {mean}: {estimates:?}"
        );
    }
}

#[test]
fn approx_error_meets_bounds_and_grows_with_jitter() {
    let mut cfg = ExperimentConfig::for_kind(ExperimentKind::ApproxError);
    cfg.n_list = vec![256];
    cfg.alpha_list = vec![1e-4, 0.4];
    cfg.window_list = vec![16];
    cfg.seeds = vec![1, 2];
    cfg.probes = 10;
    let rows = experiments::approx_error(&cfg).unwrap();
    assert_eq!(rows.len(), 2);
    let bound = truncation_bound_frobenius(16).unwrap();
    for row in &rows {
        assert_eq!(row.bound, Some(bound));
        assert!(
            row.mean_error < bound,
            "error {} at alpha {} breaks the bound {bound}",
            row.mean_error,
            row.alpha
        );
    }
    assert!(
        rows[1].mean_error > rows[0].mean_error,
        "error should grow with jitter: {} vs {}",
        rows[0].mean_error,
        rows[1].mean_error
    );

    cfg.window_list = vec![0];
    cfg.alpha_list = vec![0.1];
    cfg.seeds = vec![1];
    let rows = experiments::approx_error(&cfg).unwrap();
    assert_eq!(rows[0].bound, None, "no tail bound without a window");
    let csv = experiments::approx_error_table(&rows).to_csv();
    let line = csv.lines().nth(1).unwrap();
    assert!(
        line.ends_with(','),
        "empty bound must render as an empty field: {line}"
    );
}

#[test]
fn direct_solve_times_stages_and_reaches_small_residuals() {
    let mut cfg = ExperimentConfig::for_kind(ExperimentKind::DirectSolve);
    cfg.n_list = vec![256];
    cfg.alpha_list = vec![1e-4];
    cfg.seeds = vec![3];
    cfg.repeats = 2;
    let rows = experiments::direct_solve(&cfg).unwrap();
    assert_eq!(rows.len(), 2, "one row per case");
    for row in &rows {
        assert!(
            row.residual <= 1e-8,
            "{} residual {} too large",
            row.case.label(),
            row.residual
        );
        for t in [
            row.t_construction,
            row.t_factorization,
            row.t_solve,
            row.t2_build,
            row.t2_urv,
            row.blackbox,
        ] {
            assert!(t > 0.0, "stage timings must be positive");
        }
        let sum = row.t2_build + row.blackbox;
        assert!(
            (sum - row.t_construction).abs() <= 1e-9 + 1e-9 * row.t_construction,
            "construction breakdown must add up: {sum} vs {}",
            row.t_construction
        );
        assert!(row.t2_urv <= row.t_factorization + 1e-12);
    }
}

#[test]
fn iterative_rows_encode_nonconvergence_with_empty_fields() {
    let mut cfg = ExperimentConfig::for_kind(ExperimentKind::IterativeCompare);
    cfg.n_list = vec![512];
    cfg.alpha_list = vec![1e-7];
    cfg.cases = vec![CaseKind::Perturbed];
    cfg.rho_list = vec![1e-7];
    let rows = experiments::iterative_compare(&cfg).unwrap();
    assert_eq!(rows.len(), 2);
    let cg = &rows[0];
    let pcg = &rows[1];
    assert_eq!(cg.method, "cg");
    assert_eq!(pcg.method, "pcg");
    assert!(cg.converged && pcg.converged);
    assert!(pcg.iterations <= 10, "pcg took {} iterations", pcg.iterations);
    assert!(pcg.iterations <= cg.iterations);
    assert!(cg.residual <= 1e-9 && pcg.residual <= 1e-9);

    // Starve the iteration cap to force a non-converged row.
    cfg.max_iterations = 3;
    cfg.tolerance = 1e-14;
    let rows = experiments::iterative_compare(&cfg).unwrap();
    let cg = &rows[0];
    assert!(!cg.converged);
    assert_eq!(cg.iterations, 3);
    let csv = experiments::iterative_compare_table(&rows).to_csv();
    let line = csv.lines().nth(1).unwrap();
    assert!(line.starts_with("cg,"));
    assert!(
        line.ends_with(",,false"),
        "non-convergence must leave n_iter and r_s empty: {line}"
    );
}

#[test]
fn rank_probe_sees_low_rank_blocks() {
    let mut cfg = ExperimentConfig::for_kind(ExperimentKind::RankProbe);
    cfg.n_list = vec![256, 512];
    let rows = experiments::rank_probe(&cfg).unwrap();
    assert_eq!(rows.len(), 2);
    for row in &rows {
        assert!(
            row.eps_rank <= 64,
            "rank {} too large at N = {}",
            row.eps_rank,
            row.n
        );
        assert!(row.sigma_max > 1e-3, "jittered block should be nonzero");
    }
    assert!(
        rows[1].eps_rank <= rows[0].eps_rank + 12,
        "rank grew too fast across a doubling: {} -> {}",
        rows[0].eps_rank,
        rows[1].eps_rank
    );

    cfg.n_list = vec![256];
    cfg.alpha_list = vec![0.0];
    let rows = experiments::rank_probe(&cfg).unwrap();
    assert!(
        rows[0].eps_rank <= 2,
        "integer frequencies must leave an empty block, got rank {}",
        rows[0].eps_rank
    );
}

#[test]
fn error_decomposition_tracks_the_compression_tolerance() {
    let mut cfg = ExperimentConfig::for_kind(ExperimentKind::ErrorDecomposition);
    cfg.n_list = vec![256];
    cfg.alpha_list = vec![1e-7, 0.4];
    cfg.rho_list = vec![1e-12, 1e-4];
    cfg.probes = 10;
    let rows = experiments::error_decomposition(&cfg).unwrap();
    assert_eq!(rows.len(), 4);

    // Small jitter: the integer-factor error must track the tolerance.
    let tight = &rows[0];
    let loose = &rows[1];
    assert_eq!((tight.rho, loose.rho), (1e-12, 1e-4));
    assert!(
        loose.e_integer >= 10.0 * tight.e_integer,
        "integer-factor error should track rho: {} vs {}",
        tight.e_integer,
        loose.e_integer
    );

    // Large jitter: the total error is truncation-dominated, so the
    // tolerance barely moves it.
    let tight = &rows[2];
    let loose = &rows[3];
    let ratio = loose.e_total.max(tight.e_total) / loose.e_total.min(tight.e_total);
    assert!(
        ratio <= 3.0,
        "total error should be insensitive to rho at large jitter, ratio {ratio}"
    );
}

#[test]
fn experiment_rows_reproduce_bit_for_bit() {
    let mut cfg = ExperimentConfig::for_kind(ExperimentKind::ApproxError);
    cfg.n_list = vec![256];
    cfg.alpha_list = vec![0.1];
    cfg.window_list = vec![16];
    cfg.seeds = vec![1];
    cfg.probes = 5;
    let first = experiments::approx_error(&cfg).unwrap();
    let second = experiments::approx_error(&cfg).unwrap();
    assert_eq!(
        first[0].mean_error.to_bits(),
        second[0].mean_error.to_bits(),
        "reruns must reproduce exactly"
    );

    let mut cfg = ExperimentConfig::for_kind(ExperimentKind::RankProbe);
    cfg.n_list = vec![256];
    let first = experiments::rank_probe(&cfg).unwrap();
    let second = experiments::rank_probe(&cfg).unwrap();
    assert_eq!(first[0].eps_rank, second[0].eps_rank);
    assert_eq!(first[0].sigma_max.to_bits(), second[0].sigma_max.to_bits());
}

#[test]
fn solve_files_round_trip_in_both_encodings() {
    let dir = temp_dir("solve-io");
    let (problem, u_true, f) = consistent_instance(256, 64, 11);
    let input = SolveInput {
        points: problem.sample_points().to_vec(),
        frequencies: problem.frequencies().to_vec(),
        values: f.clone(),
    };

    let bin = dir.join("instance.bin");
    solve_io::write_input(&bin, &input).unwrap();
    assert_eq!(solve_io::read_input(&bin).unwrap(), input);

    let csv = dir.join("instance.csv");
    solve_io::write_input(&csv, &input).unwrap();
    assert_eq!(
        solve_io::read_input(&csv).unwrap(),
        input,
        "text round trip must be exact"
    );

    let opts = SolveOptions::default();
    let coeffs = solve_io::run_solve(&input, &opts).unwrap();
    assert!(
        rel_err(&coeffs, &u_true) <= 1e-6,
        "recovered coefficients disagree with the generator"
    );

    let out_csv = dir.join("coeffs.csv");
    let out_bin = dir.join("coeffs.bin");
    solve_io::write_output(&out_csv, &coeffs).unwrap();
    solve_io::write_output(&out_bin, &coeffs).unwrap();
    assert_eq!(solve_io::read_output(&out_csv).unwrap(), coeffs);
    assert_eq!(solve_io::read_output(&out_bin).unwrap(), coeffs);
}

#[test]
fn malformed_solve_files_are_rejected() {
    let dir = temp_dir("solve-bad");
    let bad_magic = dir.join("bad.bin");
    std::fs::write(&bad_magic, b"NOTMAGIC\x01\x02").unwrap();
    assert!(solve_io::read_input(&bad_magic).is_err());

    let truncated = dir.join("short.bin");
    let mut bytes = Vec::new();
    bytes.extend_from_slice(solve_io::MAGIC);
    bytes.extend_from_slice(&4u64.to_le_bytes());
    bytes.extend_from_slice(&2u64.to_le_bytes());
    std::fs::write(&truncated, bytes).unwrap();
    assert!(solve_io::read_input(&truncated).is_err());

    let bad_tag = dir.join("bad.csv");
    std::fs::write(&bad_tag, "x,0.5\ny,0.25\n").unwrap();
    assert!(solve_io::read_input(&bad_tag).is_err());
}

#[test]
fn binary_solves_an_instance_end_to_end() {
    let dir = temp_dir("binary-solve");
    let (problem, u_true, f) = consistent_instance(256, 64, 12);
    let input = SolveInput {
        points: problem.sample_points().to_vec(),
        frequencies: problem.frequencies().to_vec(),
        values: f,
    };
    let in_path = dir.join("in.bin");
    let out_path = dir.join("out.csv");
    solve_io::write_input(&in_path, &input).unwrap();

    let status = Command::new(env!("CARGO_BIN_EXE_nudft"))
        .args(["solve", "-i"])
        .arg(&in_path)
        .arg("-o")
        .arg(&out_path)
        .status()
        .unwrap();
    assert!(status.success());
    let coeffs = solve_io::read_output(&out_path).unwrap();
    assert!(rel_err(&coeffs, &u_true) <= 1e-6);
}

#[test]
fn binary_writes_sweeps_under_the_output_directory() {
    let dir = temp_dir("binary-outdir");
    let output = Command::new(env!("CARGO_BIN_EXE_nudft"))
        .args([
            "approx-error",
            "--n-list",
            "256",
            "--alpha",
            "0.1",
            "--R",
            "0",
            "--probes",
            "5",
            "--seed",
            "1",
            "--output",
            "sweep.csv",
        ])
        .env(OUTPUT_DIR_VAR, &dir)
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = std::fs::read_to_string(dir.join("sweep.csv")).unwrap();
    assert!(text.starts_with("alpha,R,mean_err,bound\n"));
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn binary_reports_errors_on_stderr() {
    let missing = Command::new(env!("CARGO_BIN_EXE_nudft"))
        .args(["solve", "-i", "/nonexistent/in.bin", "-o", "/tmp/out.bin"])
        .output()
        .unwrap();
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error:"));

    let bad_alpha = Command::new(env!("CARGO_BIN_EXE_nudft"))
        .args(["approx-error", "--alpha", "0.7"])
        .output()
        .unwrap();
    assert!(!bad_alpha.status.success());
    assert!(String::from_utf8_lossy(&bad_alpha.stderr).contains("alpha"));
}

#[test]
fn case_labels_parse_case_insensitively() {
    assert_eq!(CaseKind::parse("Random").unwrap(), CaseKind::Random);
    assert_eq!(CaseKind::parse(" PERTURBED ").unwrap(), CaseKind::Perturbed);
    assert!(CaseKind::parse("grid").is_err());
    assert_eq!(CaseKind::Random.label(), "random");
    assert_eq!(CaseKind::Perturbed.label(), "perturbed");
}
