//! Experiment configuration: per-command defaults, config-file parsing,
//! and command-line overrides.
//!
//! Every experiment runs from an [`ExperimentConfig`]. Defaults come from
//! the command being run, a plain `key = value` config file can replace
//! any of them, and explicit command-line flags override both.

use std::path::{Path, PathBuf};

use nudft_core::problem::PointDistribution;

/// Largest problem size a sweep may request without `--full`.
pub const DESK_SIZE_CAP: usize = 1 << 16;

/// Which experiment a configuration drives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    /// Truncation error of the windowed frequency expansion.
    ApproxError,
    /// Direct solver timing and residual sweep.
    DirectSolve,
    /// Plain vs preconditioned iterations on the normal equations.
    IterativeCompare,
    /// Numerical rank of an off-diagonal block of the interpolation factor.
    RankProbe,
    /// Per-factor error decomposition across compression tolerances.
    ErrorDecomposition,
}

/// Point/frequency family for a test instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CaseKind {
    /// Jittered equispaced samples and jittered integer frequencies.
    Perturbed,
    /// Uniformly random samples and jittered integer frequencies.
    Random,
}

impl CaseKind {
    pub fn distribution(self) -> PointDistribution {
        match self {
            CaseKind::Perturbed => PointDistribution::PerturbedEquispaced,
            CaseKind::Random => PointDistribution::RandomPoints,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CaseKind::Perturbed => "perturbed",
            CaseKind::Random => "random",
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        match text.trim().to_ascii_lowercase().as_str() {
            "perturbed" => Ok(CaseKind::Perturbed),
            "random" => Ok(CaseKind::Random),
            other => Err(ConfigError::Value {
                key: "cases".into(),
                value: other.into(),
                expected: "\"perturbed\" or \"random\"",
            }),
        }
    }
}

/// Configuration-handling failures.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config line {line} is not `key = value`: {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown config key {key:?}")]
    UnknownKey { key: String },
    #[error("bad value {value:?} for {key}: expected {expected}")]
    Value {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("{0}")]
    Invalid(String),
    #[error(
        "problem size {n} exceeds the default cap of {cap}; pass --full to run the large sweep"
    )]
    SizeCap { n: usize, cap: usize },
}

/// Fully resolved parameters for one experiment run.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Oversampling ratio `M / N`.
    pub m_ratio: usize,
    /// Problem sizes to sweep.
    pub n_list: Vec<usize>,
    /// Frequency jitter amplitudes to sweep.
    pub alpha_list: Vec<f64>,
    /// Sample-point jitter amplitude (perturbed case only).
    pub beta: f64,
    /// Expansion window half-widths to sweep.
    pub window_list: Vec<usize>,
    /// Compression tolerances to sweep.
    pub rho_list: Vec<f64>,
    /// Interpolation rank rule: `k = ceil(k_factor * log2 N)`.
    pub k_factor: f64,
    /// Leaf size of the rank-structured partition.
    pub leaf_size: usize,
    /// Instance seeds to average over.
    pub seeds: Vec<u64>,
    /// Iterative solver tolerance.
    pub tolerance: f64,
    /// Iterative solver iteration cap.
    pub max_iterations: usize,
    /// Probe count for randomized error estimates.
    pub probes: usize,
    /// Timing repeats; each reported time is the median.
    pub repeats: usize,
    /// Point/frequency families to run.
    pub cases: Vec<CaseKind>,
    /// Accepted for interface compatibility; kernels are single-threaded.
    pub threads: usize,
    /// Lift the desk-size cap.
    pub full: bool,
    /// Output CSV path; stdout when absent.
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// The built-in defaults for one experiment.
    pub fn for_kind(kind: ExperimentKind) -> Self {
        let mut cfg = ExperimentConfig {
            kind,
            m_ratio: 4,
            n_list: vec![4096],
            alpha_list: vec![1e-7, 1e-4, 0.1, 0.4],
            beta: 0.4,
            window_list: vec![0],
            rho_list: vec![1e-12],
            k_factor: 5.0,
            leaf_size: 128,
            seeds: vec![1],
            tolerance: 1e-12,
            max_iterations: 500,
            probes: 30,
            repeats: 1,
            cases: vec![CaseKind::Random],
            threads: 1,
            full: false,
            output: None,
        };
        match kind {
            ExperimentKind::ApproxError => {
                cfg.n_list = vec![1024];
                cfg.window_list = vec![0, 16, 32, 64, 128];
                cfg.rho_list = vec![1e-7];
                cfg.seeds = vec![1, 2, 3, 4, 5];
            }
            ExperimentKind::DirectSolve => {
                cfg.cases = vec![CaseKind::Perturbed, CaseKind::Random];
            }
            ExperimentKind::IterativeCompare => {
                cfg.n_list = vec![16384];
                cfg.rho_list = vec![1e-7];
                cfg.cases = vec![CaseKind::Perturbed, CaseKind::Random];
            }
            ExperimentKind::RankProbe => {
                cfg.n_list = vec![256, 512, 1024, 2048, 4096];
                cfg.alpha_list = vec![0.4];
            }
            ExperimentKind::ErrorDecomposition => {
                cfg.rho_list = vec![1e-12, 1e-7, 1e-4];
            }
        }
        cfg
    }

    /// Apply non-empty override fields on top of this configuration.
    pub fn apply(&mut self, over: &Overrides) {
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = &over.$field {
                    self.$field = v.clone();
                }
            };
        }
        take!(m_ratio);
        take!(n_list);
        take!(alpha_list);
        take!(beta);
        take!(window_list);
        take!(rho_list);
        take!(k_factor);
        take!(leaf_size);
        take!(seeds);
        take!(tolerance);
        take!(max_iterations);
        take!(probes);
        take!(repeats);
        take!(cases);
        take!(threads);
        take!(full);
        if let Some(path) = &over.output {
            self.output = Some(path.clone());
        }
    }

    /// Interpolation rank for size `n` under the configured rule.
    pub fn k_for(&self, n: usize) -> usize {
        let bits = (n.max(2) as f64).log2();
        (self.k_factor * bits).ceil().max(1.0) as usize
    }

    /// Reject impossible parameter combinations early, before any solver
    /// build starts, and enforce the desk-size cap unless `full` is set.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.m_ratio < 1 {
            return Err(ConfigError::Invalid("m_ratio must be at least 1".into()));
        }
        if self.n_list.is_empty() {
            return Err(ConfigError::Invalid("n_list must be non-empty".into()));
        }
        for &n in &self.n_list {
            if n < 2 {
                return Err(ConfigError::Invalid(format!("size {n} is too small")));
            }
            if !self.full && n > DESK_SIZE_CAP {
                return Err(ConfigError::SizeCap {
                    n,
                    cap: DESK_SIZE_CAP,
                });
            }
        }
        if self.alpha_list.is_empty() {
            return Err(ConfigError::Invalid("alpha list must be non-empty".into()));
        }
        for &a in &self.alpha_list {
            if !(0.0..0.5).contains(&a) {
                return Err(ConfigError::Invalid(format!(
                    "alpha {a} outside [0, 0.5)"
                )));
            }
        }
        if !(0.0..0.5).contains(&self.beta) {
            return Err(ConfigError::Invalid(format!(
                "beta {} outside [0, 0.5)",
                self.beta
            )));
        }
        for &rho in &self.rho_list {
            if !(rho > 0.0 && rho < 1.0) {
                return Err(ConfigError::Invalid(format!(
                    "tolerance rho {rho} outside (0, 1)"
                )));
            }
        }
        if self.k_factor <= 0.0 {
            return Err(ConfigError::Invalid("k_factor must be positive".into()));
        }
        if self.leaf_size < 2 {
            return Err(ConfigError::Invalid("leaf_size must be at least 2".into()));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seed list must be non-empty".into()));
        }
        if self.tolerance <= 0.0 {
            return Err(ConfigError::Invalid("tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(ConfigError::Invalid(
                "max_iterations must be at least 1".into(),
            ));
        }
        if self.probes == 0 {
            return Err(ConfigError::Invalid("probes must be at least 1".into()));
        }
        if self.repeats == 0 {
            return Err(ConfigError::Invalid("repeats must be at least 1".into()));
        }
        if self.cases.is_empty() {
            return Err(ConfigError::Invalid("case list must be non-empty".into()));
        }
        if self.threads == 0 {
            return Err(ConfigError::Invalid("threads must be at least 1".into()));
        }
        Ok(())
    }
}

/// Optional replacements for any [`ExperimentConfig`] field, collected
/// from a config file or from command-line flags.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub m_ratio: Option<usize>,
    pub n_list: Option<Vec<usize>>,
    pub alpha_list: Option<Vec<f64>>,
    pub beta: Option<f64>,
    pub window_list: Option<Vec<usize>>,
    pub rho_list: Option<Vec<f64>>,
    pub k_factor: Option<f64>,
    pub leaf_size: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    pub probes: Option<usize>,
    pub repeats: Option<usize>,
    pub cases: Option<Vec<CaseKind>>,
    pub threads: Option<usize>,
    pub full: Option<bool>,
    pub output: Option<PathBuf>,
}

impl Overrides {
    /// Parse a `key = value` config file. Blank lines and `#` comments are
    /// ignored; every key mirrors one command-line flag.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut over = Overrides::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: idx + 1,
                text: raw.to_string(),
            })?;
            over.set(key.trim(), value.trim())?;
        }
        Ok(over)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "m_ratio" => self.m_ratio = Some(parse_one(key, value, "an integer")?),
            "n_list" => self.n_list = Some(parse_list(key, value, "integers")?),
            "alpha" => self.alpha_list = Some(parse_list(key, value, "numbers")?),
            "beta" => self.beta = Some(parse_one(key, value, "a number")?),
            "R" => self.window_list = Some(parse_list(key, value, "integers")?),
            "rho" => self.rho_list = Some(parse_list(key, value, "numbers")?),
            "k_factor" => self.k_factor = Some(parse_one(key, value, "a number")?),
            "leaf_size" => self.leaf_size = Some(parse_one(key, value, "an integer")?),
            "seeds" => self.seeds = Some(parse_list(key, value, "integers")?),
            "tol" => self.tolerance = Some(parse_one(key, value, "a number")?),
            "maxit" => self.max_iterations = Some(parse_one(key, value, "an integer")?),
            "probes" => self.probes = Some(parse_one(key, value, "an integer")?),
            "repeats" => self.repeats = Some(parse_one(key, value, "an integer")?),
            "cases" => {
                let mut cases = Vec::new();
                for part in value.split(',') {
                    cases.push(CaseKind::parse(part)?);
                }
                self.cases = Some(cases);
            }
            "threads" => self.threads = Some(parse_one(key, value, "an integer")?),
            "full" => {
                self.full = Some(match value.to_ascii_lowercase().as_str() {
                    "true" | "1" | "yes" => true,
                    "false" | "0" | "no" => false,
                    _ => {
                        return Err(ConfigError::Value {
                            key: key.into(),
                            value: value.into(),
                            expected: "true or false",
                        })
                    }
                })
            }
            "output" => self.output = Some(PathBuf::from(value)),
            _ => return Err(ConfigError::UnknownKey { key: key.into() }),
        }
        Ok(())
    }

    /// Merge `later` on top of `self`: any field `later` sets wins.
    pub fn merged(mut self, later: Overrides) -> Overrides {
        macro_rules! pick {
            ($field:ident) => {
                if later.$field.is_some() {
                    self.$field = later.$field;
                }
            };
        }
        pick!(m_ratio);
        pick!(n_list);
        pick!(alpha_list);
        pick!(beta);
        pick!(window_list);
        pick!(rho_list);
        pick!(k_factor);
        pick!(leaf_size);
        pick!(seeds);
        pick!(tolerance);
        pick!(max_iterations);
        pick!(probes);
        pick!(repeats);
        pick!(cases);
        pick!(threads);
        pick!(full);
        pick!(output);
        self
    }
}

fn parse_one<T: std::str::FromStr>(
    key: &str,
    value: &str,
    expected: &'static str,
) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::Value {
        key: key.into(),
        value: value.into(),
        expected,
    })
}

fn parse_list<T: std::str::FromStr>(
    key: &str,
    value: &str,
    expected: &'static str,
) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .map(|part| parse_one(key, part, expected))
        .collect()
}

/// Resolve the final configuration: defaults for `kind`, then the config
/// file (if any), then command-line overrides.
pub fn resolve(
    kind: ExperimentKind,
    file: Option<Overrides>,
    cli: Overrides,
) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::for_kind(kind);
    let combined = match file {
        Some(f) => f.merged(cli),
        None => cli,
    };
    cfg.apply(&combined);
    cfg.validate()?;
    Ok(cfg)
}
