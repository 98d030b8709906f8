//! File formats and runner for the one-shot `solve` subcommand.
//!
//! Two interchangeable encodings, chosen by file extension: a `.csv`
//! text form and a little-endian binary form for bulk data. Both carry
//! the sample points, the target frequencies, and the complex sample
//! values; the output file holds the recovered coefficients.
//!
//! CSV input rows are tagged: `x,<point>`, `omega,<frequency>`, and
//! `f,<re>,<im>`, in any order; `#` starts a comment. CSV output has the
//! header `re,im` and one row per coefficient, printed with enough
//! digits to round-trip exactly.
//!
//! Binary input: the magic bytes `NUDFTIO1`, counts `m` and `n` as
//! little-endian `u64`, then `m` points, `n` frequencies, and `m` re/im
//! pairs, all `f64`. Binary output: the same magic, `n` as `u64`, and
//! `n` re/im pairs.

use std::path::Path;

use nudft_core::inudft::{build_type3, RHO_DIRECT};
use nudft_core::problem::NudftProblem;
use nudft_core::C64;

use crate::experiments::nufft_slab_for;
use crate::CliError;

/// Magic prefix of the binary encodings.
pub const MAGIC: &[u8; 8] = b"NUDFTIO1";

/// One solve instance: points, frequencies, and observed values.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveInput {
    pub points: Vec<f64>,
    pub frequencies: Vec<f64>,
    pub values: Vec<C64>,
}

/// Parameters of the one-shot solve.
#[derive(Clone, Debug)]
pub struct SolveOptions {
    /// Compression tolerance.
    pub rho: f64,
    /// Interpolation rank rule: `k = ceil(k_factor * log2 N)`.
    pub k_factor: f64,
    /// Expansion window half-width.
    pub window: usize,
    /// Leaf size of the compression trees.
    pub leaf_size: usize,
    /// Seed for the randomized sampling.
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            rho: RHO_DIRECT,
            k_factor: 5.0,
            window: 0,
            leaf_size: 128,
            seed: 7,
        }
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .map(|e| e.eq_ignore_ascii_case("csv"))
        .unwrap_or(false)
}

/// Read a solve instance, choosing the encoding from the extension.
pub fn read_input(path: &Path) -> Result<SolveInput, CliError> {
    if is_csv(path) {
        read_input_csv(&std::fs::read_to_string(path)?)
    } else {
        read_input_binary(&std::fs::read(path)?)
    }
}

fn read_input_csv(text: &str) -> Result<SolveInput, CliError> {
    let mut input = SolveInput {
        points: Vec::new(),
        frequencies: Vec::new(),
        values: Vec::new(),
    };
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',').map(str::trim);
        let tag = parts.next().unwrap_or("");
        let mut number = |what: &str| -> Result<f64, CliError> {
            parts
                .next()
                .ok_or_else(|| {
                    CliError::Input(format!("line {}: missing {what}", idx + 1))
                })?
                .parse()
                .map_err(|_| CliError::Input(format!("line {}: bad {what}", idx + 1)))
        };
        match tag {
            "x" => {
                let v = number("point")?;
                input.points.push(v);
            }
            "omega" => {
                let v = number("frequency")?;
                input.frequencies.push(v);
            }
            "f" => {
                let re = number("real part")?;
                let im = number("imaginary part")?;
                input.values.push(C64::new(re, im));
            }
            other => {
                return Err(CliError::Input(format!(
                    "line {}: unknown row tag {other:?} (expected x, omega, or f)",
                    idx + 1
                )))
            }
        }
    }
    Ok(input)
}

fn read_input_binary(bytes: &[u8]) -> Result<SolveInput, CliError> {
    let mut cursor = Cursor { bytes, at: 0 };
    let magic = cursor.take(8)?;
    if magic != MAGIC {
        return Err(CliError::Input(
            "not a solve input file (bad magic bytes)".into(),
        ));
    }
    let m = cursor.u64()? as usize;
    let n = cursor.u64()? as usize;
    let expected = 8 + 16 + 8 * m + 8 * n + 16 * m;
    if bytes.len() != expected {
        return Err(CliError::Input(format!(
            "file holds {} bytes but counts m={m}, n={n} require {expected}",
            bytes.len()
        )));
    }
    let points = (0..m).map(|_| cursor.f64()).collect::<Result<_, _>>()?;
    let frequencies = (0..n).map(|_| cursor.f64()).collect::<Result<_, _>>()?;
    let values = (0..m)
        .map(|_| Ok(C64::new(cursor.f64()?, cursor.f64()?)))
        .collect::<Result<_, CliError>>()?;
    Ok(SolveInput {
        points,
        frequencies,
        values,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take(&mut self, len: usize) -> Result<&[u8], CliError> {
        let end = self.at.checked_add(len).filter(|&e| e <= self.bytes.len());
        match end {
            Some(e) => {
                let slice = &self.bytes[self.at..e];
                self.at = e;
                Ok(slice)
            }
            None => Err(CliError::Input("truncated binary input".into())),
        }
    }

    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CliError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Write a solve instance in the encoding chosen by the extension.
pub fn write_input(path: &Path, input: &SolveInput) -> Result<(), CliError> {
    if input.values.len() != input.points.len() {
        return Err(CliError::Input(format!(
            "{} sample values for {} points",
            input.values.len(),
            input.points.len()
        )));
    }
    if is_csv(path) {
        let mut text = String::new();
        for &x in &input.points {
            text.push_str(&format!("x,{x:e}\n"));
        }
        for &w in &input.frequencies {
            text.push_str(&format!("omega,{w:e}\n"));
        }
        for v in &input.values {
            text.push_str(&format!("f,{:e},{:e}\n", v.re, v.im));
        }
        std::fs::write(path, text)?;
    } else {
        let m = input.points.len();
        let n = input.frequencies.len();
        let mut bytes = Vec::with_capacity(8 + 16 + 8 * m + 8 * n + 16 * m);
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&(m as u64).to_le_bytes());
        bytes.extend_from_slice(&(n as u64).to_le_bytes());
        for &x in &input.points {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        for &w in &input.frequencies {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        for v in &input.values {
            bytes.extend_from_slice(&v.re.to_le_bytes());
            bytes.extend_from_slice(&v.im.to_le_bytes());
        }
        std::fs::write(path, bytes)?;
    }
    Ok(())
}

/// Write recovered coefficients in the encoding chosen by the extension.
pub fn write_output(path: &Path, coefficients: &[C64]) -> Result<(), CliError> {
    if is_csv(path) {
        let mut text = String::from("re,im\n");
        for c in coefficients {
            text.push_str(&format!("{:e},{:e}\n", c.re, c.im));
        }
        std::fs::write(path, text)?;
    } else {
        let mut bytes = Vec::with_capacity(8 + 8 + 16 * coefficients.len());
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&(coefficients.len() as u64).to_le_bytes());
        for c in coefficients {
            bytes.extend_from_slice(&c.re.to_le_bytes());
            bytes.extend_from_slice(&c.im.to_le_bytes());
        }
        std::fs::write(path, bytes)?;
    }
    Ok(())
}

/// Read coefficients written by [`write_output`].
pub fn read_output(path: &Path) -> Result<Vec<C64>, CliError> {
    if is_csv(path) {
        let text = std::fs::read_to_string(path)?;
        let mut out = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || (idx == 0 && line == "re,im") {
                continue;
            }
            let (re, im) = line.split_once(',').ok_or_else(|| {
                CliError::Input(format!("line {}: expected re,im", idx + 1))
            })?;
            let parse = |s: &str| {
                s.trim()
                    .parse()
                    .map_err(|_| CliError::Input(format!("line {}: bad number", idx + 1)))
            };
            out.push(C64::new(parse(re)?, parse(im)?));
        }
        Ok(out)
    } else {
        let bytes = std::fs::read(path)?;
        let mut cursor = Cursor {
            bytes: &bytes,
            at: 0,
        };
        if cursor.take(8)? != MAGIC {
            return Err(CliError::Input(
                "not a solve output file (bad magic bytes)".into(),
            ));
        }
        let n = cursor.u64()? as usize;
        if bytes.len() != 16 + 16 * n {
            return Err(CliError::Input(format!(
                "file holds {} bytes but count n={n} requires {}",
                bytes.len(),
                16 + 16 * n
            )));
        }
        (0..n)
            .map(|_| Ok(C64::new(cursor.f64()?, cursor.f64()?)))
            .collect()
    }
}

/// Recover coefficients for one instance read from disk.
pub fn run_solve(input: &SolveInput, opts: &SolveOptions) -> Result<Vec<C64>, CliError> {
    if input.values.len() != input.points.len() {
        return Err(CliError::Input(format!(
            "{} sample values for {} points",
            input.values.len(),
            input.points.len()
        )));
    }
    let problem = NudftProblem::new(input.points.clone(), input.frequencies.clone())?;
    let n = problem.num_frequencies();
    let k = (opts.k_factor * (n.max(2) as f64).log2()).ceil().max(1.0) as usize;
    let solver_opts = nudft_core::inudft::SolverOptions {
        leaf_size: opts.leaf_size,
        seed: opts.seed,
        slab: 64,
        nufft_slab: nufft_slab_for(problem.num_samples()),
    };
    let solver = build_type3(&problem, opts.rho, k, opts.window, &solver_opts)?;
    Ok(solver.solve(&input.values)?)
}
