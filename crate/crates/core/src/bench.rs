//! Batch drivers: solve the sine model problem over a list of mesh sizes and
//! relaxation factors, attach cycle-model estimates, and write CSV reports.
//!
//! Every column except `wall_time_s` is a pure function of the configuration
//! and seed. Cases may run concurrently, but rows always come back in
//! configuration order: sizes outer, relaxation factors inner.

use std::fmt;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use thiserror::Error;

use crate::cycle::{cycles, CycleError, ScheduleBuilder, ScheduleVariant};
use crate::error::SorError;
use crate::fixed::{solve_fixed, QFormat};
use crate::problem::{Mesh2D, PoissonProblem};
use crate::splitting::{Ordering, SolveReport, SorParams, Termination};
use crate::stencil::{solve_mesh_with, Execution};

pub const CSV_HEADER: [&str; 11] = [
    "size",
    "omega",
    "arithmetic",
    "ordering",
    "iterations",
    "final_residual",
    "wall_time_s",
    "model_cycles_seq",
    "model_cycles_par",
    "model_speedup",
    "converged",
];

pub const OMEGA_SWEEP_HEADER: [&str; 6] = [
    "size",
    "omega",
    "iterations",
    "final_residual",
    "converged",
    "minimizer",
];

/// Mesh sizes run when none are given: 8 up to 512, doubling.
pub const DEFAULT_SIZES: [usize; 7] = [8, 16, 32, 64, 128, 256, 512];

/// The full progression, including the slow 1024 and 2048 meshes.
pub const FULL_SIZES: [usize; 9] = [8, 16, 32, 64, 128, 256, 512, 1024, 2048];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Solver(#[from] SorError),
    #[error(transparent)]
    Cycle(#[from] CycleError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn config_err(msg: impl Into<String>) -> BenchError {
    BenchError::Config(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Arithmetic {
    #[default]
    Float,
    Fixed(QFormat),
}

impl fmt::Display for Arithmetic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arithmetic::Float => f.write_str("float"),
            Arithmetic::Fixed(format) => write!(f, "fixed:{}", format.frac_bits()),
        }
    }
}

impl FromStr for Arithmetic {
    type Err = BenchError;

    /// `float`, `fixed` (16 fractional bits) or `fixed:<f>`.
    fn from_str(s: &str) -> Result<Self, BenchError> {
        match s.split_once(':') {
            None if s == "float" => Ok(Arithmetic::Float),
            None if s == "fixed" => Ok(Arithmetic::Fixed(QFormat::default())),
            Some(("fixed", bits)) => {
                let bits = bits
                    .parse()
                    .map_err(|_| config_err(format!("invalid fractional bit count `{bits}`")))?;
                let format =
                    QFormat::with_frac_bits(bits).map_err(|e| config_err(e.to_string()))?;
                Ok(Arithmetic::Fixed(format))
            }
            _ => Err(config_err(format!("unknown arithmetic `{s}`"))),
        }
    }
}

/// One relaxation factor or an inclusive `start:stop:step` range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OmegaSpec {
    Single(f64),
    Range { start: f64, stop: f64, step: f64 },
}

impl OmegaSpec {
    /// Grid points `start + k·step` up to `stop` (with a little slack for
    /// rounding), computed from the integer `k` so no error accumulates.
    pub fn values(&self) -> Vec<f64> {
        match *self {
            OmegaSpec::Single(w) => vec![w],
            OmegaSpec::Range { start, stop, step } => {
                let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
                (0..count).map(|k| start + k as f64 * step).collect()
            }
        }
    }
}

impl fmt::Display for OmegaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OmegaSpec::Single(w) => write!(f, "{w}"),
            OmegaSpec::Range { start, stop, step } => write!(f, "{start}:{stop}:{step}"),
        }
    }
}

impl FromStr for OmegaSpec {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| config_err(format!("invalid relaxation factor `{t}`")))
        };
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            [w] => Ok(OmegaSpec::Single(num(w)?)),
            [a, b, c] => {
                let (start, stop, step) = (num(a)?, num(b)?, num(c)?);
                if step.is_nan() || step <= 0.0 || stop < start {
                    return Err(config_err(format!(
                        "invalid range `{s}`: need start <= stop and step > 0"
                    )));
                }
                Ok(OmegaSpec::Range { start, stop, step })
            }
            _ => Err(config_err(format!(
                "expected `omega` or `start:stop:step`, got `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sizes: Vec<usize>,
    pub omega: OmegaSpec,
    /// `None`: 1e-8 for float runs, 1e-3 for fixed-point runs.
    pub tol: Option<f64>,
    /// `None`: 100 sweeps per unknown.
    pub max_sweeps: Option<usize>,
    pub ordering: Ordering,
    pub arithmetic: Arithmetic,
    pub frequency_hz: f64,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub assigns_per_update: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sizes: DEFAULT_SIZES.to_vec(),
            omega: OmegaSpec::Single(1.5),
            tol: None,
            max_sweeps: None,
            ordering: Ordering::Lexicographic,
            arithmetic: Arithmetic::Float,
            frequency_hz: 100e6,
            seed: 0,
            output: None,
            assigns_per_update: ScheduleBuilder::default().assigns_per_update,
        }
    }
}

impl RunConfig {
    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn from_kv_text(text: &str) -> Result<Self, BenchError> {
        let mut config = Self::default();
        config.apply_kv_text(text)?;
        Ok(config)
    }

    /// Applies `key = value` lines over the current values.
    pub fn apply_kv_text(&mut self, text: &str) -> Result<(), BenchError> {
        for (idx, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected `key = value`", idx + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| config_err(format!("line {}: {e}", idx + 1)))?;
        }
        Ok(())
    }

    pub fn from_kv_file(path: &Path) -> Result<Self, BenchError> {
        Self::from_kv_text(&std::fs::read_to_string(path)?)
    }

    /// Sets one option by its command-line name (without the leading dashes).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), BenchError> {
        match key {
            "size" | "sizes" => {
                self.sizes = value
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<usize>()
                            .map_err(|_| config_err(format!("invalid mesh size `{s}`")))
                    })
                    .collect::<Result<_, _>>()?;
            }
            "omega" => self.omega = value.parse()?,
            "tol" => {
                self.tol = Some(
                    value
                        .parse()
                        .map_err(|_| config_err(format!("invalid tolerance `{value}`")))?,
                )
            }
            "max-sweeps" | "max_sweeps" => {
                self.max_sweeps = Some(
                    value
                        .parse()
                        .map_err(|_| config_err(format!("invalid sweep cap `{value}`")))?,
                )
            }
            "ordering" => self.ordering = value.parse()?,
            "arith" | "arithmetic" => self.arithmetic = value.parse()?,
            "freq-hz" | "freq_hz" => {
                self.frequency_hz = value
                    .parse()
                    .map_err(|_| config_err(format!("invalid frequency `{value}`")))?
            }
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| config_err(format!("invalid seed `{value}`")))?
            }
            "out" | "output" => self.output = Some(PathBuf::from(value)),
            "assigns-per-update" | "assigns_per_update" => {
                self.assigns_per_update = value
                    .parse()
                    .map_err(|_| config_err(format!("invalid assignment count `{value}`")))?
            }
            other => return Err(config_err(format!("unknown option `{other}`"))),
        }
        Ok(())
    }

    pub fn tolerance(&self) -> f64 {
        self.tol.unwrap_or(match self.arithmetic {
            Arithmetic::Float => 1e-8,
            Arithmetic::Fixed(_) => 1e-3,
        })
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.sizes.is_empty() {
            return Err(config_err("at least one mesh size is required"));
        }
        if self.sizes.contains(&0) {
            return Err(config_err("mesh sizes must be at least 1"));
        }
        if self.tolerance().is_nan() || self.tolerance() <= 0.0 {
            return Err(config_err("tolerance must be positive"));
        }
        if self.max_sweeps == Some(0) {
            return Err(config_err("max-sweeps must be at least 1"));
        }
        if !(self.frequency_hz > 0.0 && self.frequency_hz.is_finite()) {
            return Err(config_err("frequency must be positive"));
        }
        if self.assigns_per_update == 0 {
            return Err(config_err("assigns-per-update must be at least 1"));
        }
        if self.omega.values().iter().any(|w| !w.is_finite()) {
            return Err(config_err("relaxation factors must be finite"));
        }
        Ok(())
    }

    fn params(&self, omega: f64) -> SorParams {
        SorParams {
            omega,
            tol: self.tolerance(),
            max_sweeps: self.max_sweeps,
            ordering: self.ordering,
        }
    }
}

/// Seeded initial interior, uniform in `[-1, 1)`, on the boundary of `problem`.
/// Each size draws from its own stream, so rows do not depend on which other
/// sizes are in the batch.
pub fn initial_guess(problem: &PoissonProblem, seed: u64) -> Mesh2D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(problem.n() as u64);
    let mut mesh = problem.mesh();
    let values: Vec<f64> = (0..problem.dim())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    mesh.set_interior(&values).expect("length matches");
    mesh
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub size: usize,
    pub omega: f64,
    pub arithmetic: Arithmetic,
    pub ordering: Ordering,
    pub iterations: usize,
    pub final_residual: f64,
    pub wall_time_s: f64,
    pub model_cycles_seq: Option<u64>,
    pub model_cycles_par: Option<u64>,
    pub model_speedup: Option<f64>,
    pub termination: Termination,
}

impl ReportRow {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    /// Model time of the sequential and red-black schedules at `frequency_hz`.
    pub fn model_times(&self, frequency_hz: f64) -> Option<(f64, f64)> {
        Some((
            self.model_cycles_seq? as f64 / frequency_hz,
            self.model_cycles_par? as f64 / frequency_hz,
        ))
    }

    fn record(&self) -> Vec<String> {
        let opt_u = |v: Option<u64>| v.map_or_else(String::new, |c| c.to_string());
        vec![
            self.size.to_string(),
            fmt_float(self.omega),
            self.arithmetic.to_string(),
            self.ordering.to_string(),
            self.iterations.to_string(),
            fmt_float(self.final_residual),
            fmt_float(self.wall_time_s),
            opt_u(self.model_cycles_seq),
            opt_u(self.model_cycles_par),
            self.model_speedup.map_or_else(String::new, fmt_float),
            self.converged().to_string(),
        ]
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<ReportRow>,
}

impl BenchReport {
    /// True when some run diverged or hit the sweep cap.
    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(|r| !r.converged())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), BenchError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER)?;
        for row in &self.rows {
            w.write_record(row.record())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("CSV output is UTF-8")
    }
}

/// Solves one `(size, omega)` case with the configured arithmetic and ordering.
pub fn solve_case(config: &RunConfig, size: usize, omega: f64) -> Result<SolveReport, SorError> {
    let problem = PoissonProblem::manufactured_sine(size)?;
    let start = initial_guess(&problem, config.seed);
    let params = config.params(omega);
    match config.arithmetic {
        Arithmetic::Float => {
            let mut mesh = start;
            solve_mesh_with(&problem, &params, &mut mesh, Execution::default())
        }
        Arithmetic::Fixed(format) => solve_fixed(&problem, &params, format, &start),
    }
}

fn run_case(config: &RunConfig, size: usize, omega: f64) -> Result<ReportRow, BenchError> {
    let report = match solve_case(config, size, omega) {
        Ok(report) => report,
        // out-of-range data for the fixed-point format counts as a failed run
        Err(SorError::FixedCell { row, col, .. }) => SolveReport {
            iterations: 0,
            residual_history: vec![f64::NAN],
            termination: Termination::Diverged {
                index: Some(row * size + col),
            },
            wall_time: 0.0,
            final_iterate: Vec::new(),
        },
        Err(e) => return Err(e.into()),
    };
    let (mut seq, mut par, mut speedup) = (None, None, None);
    if report.iterations > 0 {
        let builder = ScheduleBuilder::new(config.assigns_per_update);
        let sweeps = report.iterations as u64;
        let s = cycles(&builder.build(size, ScheduleVariant::Sequential, sweeps)?);
        let p = cycles(&builder.build(size, ScheduleVariant::RedBlack, sweeps)?);
        seq = Some(s);
        par = Some(p);
        speedup = Some(s as f64 / p as f64);
    }
    Ok(ReportRow {
        size,
        omega,
        arithmetic: config.arithmetic,
        ordering: config.ordering,
        iterations: report.iterations,
        final_residual: report.final_residual(),
        wall_time_s: report.wall_time,
        model_cycles_seq: seq,
        model_cycles_par: par,
        model_speedup: speedup,
        termination: report.termination,
    })
}

fn run_cases(config: &RunConfig) -> Result<Vec<ReportRow>, BenchError> {
    config.validate()?;
    let omegas = config.omega.values();
    let cases: Vec<(usize, f64)> = config
        .sizes
        .iter()
        .flat_map(|&size| omegas.iter().map(move |&w| (size, w)))
        .collect();
    #[cfg(feature = "parallel")]
    let rows = cases
        .par_iter()
        .map(|&(size, w)| run_case(config, size, w))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let rows = cases
        .iter()
        .map(|&(size, w)| run_case(config, size, w))
        .collect();
    rows
}

/// Runs every `(size, omega)` case and writes the CSV to `config.output` when set.
pub fn run_bench(config: &RunConfig) -> Result<BenchReport, BenchError> {
    let report = BenchReport {
        rows: run_cases(config)?,
    };
    if let Some(path) = &config.output {
        report.write_csv(File::create(path)?)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmegaSweepRow {
    pub size: usize,
    pub omega: f64,
    pub iterations: usize,
    pub final_residual: f64,
    pub termination: Termination,
    /// Fewest iterations among the converged runs of this size (first such ω on ties).
    pub minimizer: bool,
}

impl OmegaSweepRow {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmegaSweepReport {
    pub rows: Vec<OmegaSweepRow>,
}

impl OmegaSweepReport {
    /// The minimizing ω for `size`, if any run of that size converged.
    pub fn best_omega(&self, size: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.size == size && r.minimizer)
            .map(|r| r.omega)
    }

    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(|r| !r.converged())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), BenchError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(OMEGA_SWEEP_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.size.to_string(),
                fmt_float(r.omega),
                r.iterations.to_string(),
                fmt_float(r.final_residual),
                r.converged().to_string(),
                r.minimizer.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Iteration count per relaxation factor. The range must lie inside `(0, 2)`.
pub fn run_omega_sweep(config: &RunConfig) -> Result<OmegaSweepReport, BenchError> {
    let omegas = config.omega.values();
    if omegas.iter().any(|&w| !(w > 0.0 && w < 2.0)) {
        return Err(config_err("omega sweep range must lie inside (0, 2)"));
    }
    let bench_rows = run_cases(config)?;
    let mut rows: Vec<OmegaSweepRow> = bench_rows
        .into_iter()
        .map(|r| OmegaSweepRow {
            size: r.size,
            omega: r.omega,
            iterations: r.iterations,
            final_residual: r.final_residual,
            termination: r.termination,
            minimizer: false,
        })
        .collect();
    for size in &config.sizes {
        let best = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.size == *size && r.converged())
            .min_by_key(|(_, r)| r.iterations)
            .map(|(k, _)| k);
        if let Some(k) = best {
            rows[k].minimizer = true;
        }
    }
    let report = OmegaSweepReport { rows };
    if let Some(path) = &config.output {
        report.write_csv(File::create(path)?)?;
    }
    Ok(report)
}
