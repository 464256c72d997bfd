//! Matrix-form relaxation on a split system `A = D + L + U`.
//!
//! One SOR step is
//!
//! ```text
//! x_new = (D + ωL)⁻¹ [(1 - ω)D - ωU] x + ω (D + ωL)⁻¹ b
//! ```
//!
//! carried out as a forward substitution over the rows, so in component form
//! `x_i ← (1-ω) x_i + ω (b_i - Σ_{j<i} a_ij x_j_new - Σ_{j>i} a_ij x_j_old) / a_ii`.
//! Here `L` and `U` are the strictly lower and upper parts of `A` itself; with
//! the negated convention `A = D - L - U` the same operator reads
//! `(D - ωL)⁻¹ [ωU + (1 - ω)D]`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Schur};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SorError};
use crate::sparse::{CsrMatrix, SparseSystem};

/// Largest dimension accepted by the dense analysis routines.
pub const MAX_DENSE_DIM: usize = 64;

/// Diagonal, strictly lower and strictly upper parts of a square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitParts {
    pub diag: Vec<f64>,
    pub lower: CsrMatrix,
    pub upper: CsrMatrix,
}

impl SplitParts {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// `D + L + U` as a single matrix.
    pub fn reassemble(&self) -> CsrMatrix {
        let rows = (0..self.dim())
            .map(|i| {
                let (lc, lv) = self.lower.row(i);
                let (uc, uv) = self.upper.row(i);
                lc.iter()
                    .copied()
                    .zip(lv.iter().copied())
                    .chain(std::iter::once((i, self.diag[i])))
                    .chain(uc.iter().copied().zip(uv.iter().copied()))
                    .collect()
            })
            .collect();
        CsrMatrix::from_rows(self.dim(), rows).expect("split parts are disjoint")
    }

    #[inline]
    fn off_diagonal_dot(&self, i: usize, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        let (cols, vals) = self.lower.row(i);
        for (&j, &a) in cols.iter().zip(vals) {
            acc += a * x[j];
        }
        let (cols, vals) = self.upper.row(i);
        for (&j, &a) in cols.iter().zip(vals) {
            acc += a * x[j];
        }
        acc
    }

    fn check_vectors(&self, x: &[f64], b: &[f64]) -> Result<()> {
        for len in [x.len(), b.len()] {
            if len != self.dim() {
                return Err(SorError::DimensionMismatch {
                    expected: self.dim(),
                    got: len,
                });
            }
        }
        Ok(())
    }
}

/// Partitions the system matrix into `D + L + U`. Fails on the first row whose
/// diagonal entry is zero or absent.
pub fn split(system: &SparseSystem) -> Result<SplitParts> {
    let a = system.matrix();
    let n = system.dim();
    let mut diag = vec![0.0; n];
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    for (i, d) in diag.iter_mut().enumerate() {
        let (cols, vals) = a.row(i);
        let mut lo = Vec::new();
        let mut up = Vec::new();
        for (&j, &v) in cols.iter().zip(vals) {
            match j.cmp(&i) {
                std::cmp::Ordering::Less => lo.push((j, v)),
                std::cmp::Ordering::Equal => *d = v,
                std::cmp::Ordering::Greater => up.push((j, v)),
            }
        }
        if *d == 0.0 {
            return Err(SorError::ZeroDiagonal { row: i });
        }
        lower.push(lo);
        upper.push(up);
    }
    Ok(SplitParts {
        diag,
        lower: CsrMatrix::from_rows(n, lower)?,
        upper: CsrMatrix::from_rows(n, upper)?,
    })
}

/// One SOR step in place. Returns the index of the first non-finite component
/// as an error.
pub fn sor_step_in_place(parts: &SplitParts, x: &mut [f64], b: &[f64], omega: f64) -> Result<()> {
    parts.check_vectors(x, b)?;
    if !omega.is_finite() {
        return Err(SorError::InvalidParams(format!(
            "omega must be finite, got {omega}"
        )));
    }
    let keep = 1.0 - omega;
    for i in 0..parts.dim() {
        let gs = (b[i] - parts.off_diagonal_dot(i, x)) / parts.diag[i];
        let next = keep * x[i] + omega * gs;
        if !next.is_finite() {
            return Err(SorError::NonFinite { index: i });
        }
        x[i] = next;
    }
    Ok(())
}

pub fn sor_step(parts: &SplitParts, x: &[f64], b: &[f64], omega: f64) -> Result<Vec<f64>> {
    let mut next = x.to_vec();
    sor_step_in_place(parts, &mut next, b, omega)?;
    Ok(next)
}

pub fn gauss_seidel_step(parts: &SplitParts, x: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    parts.check_vectors(x, b)?;
    let mut next = x.to_vec();
    for i in 0..parts.dim() {
        let v = (b[i] - parts.off_diagonal_dot(i, &next)) / parts.diag[i];
        if !v.is_finite() {
            return Err(SorError::NonFinite { index: i });
        }
        next[i] = v;
    }
    Ok(next)
}

pub fn jacobi_step(parts: &SplitParts, x: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    parts.check_vectors(x, b)?;
    (0..parts.dim())
        .map(|i| {
            let v = (b[i] - parts.off_diagonal_dot(i, x)) / parts.diag[i];
            if v.is_finite() {
                Ok(v)
            } else {
                Err(SorError::NonFinite { index: i })
            }
        })
        .collect()
}

/// `‖b - Ax‖∞ / max(‖b‖∞, f64::MIN_POSITIVE)`.
///
/// # Panics
///
/// If `x` does not have the system's dimension.
pub fn relative_residual(system: &SparseSystem, x: &[f64]) -> f64 {
    assert_eq!(
        x.len(),
        system.dim(),
        "iterate length must match the system"
    );
    let a = system.matrix();
    let mut worst: f64 = 0.0;
    let mut bnorm: f64 = 0.0;
    for (i, &b) in system.rhs().iter().enumerate() {
        let (cols, vals) = a.row(i);
        let mut ax = 0.0;
        for (&j, &v) in cols.iter().zip(vals) {
            ax += v * x[j];
        }
        let r = (b - ax).abs();
        // NaN must not be swallowed by f64::max
        worst = if r.is_nan() { f64::NAN } else { worst.max(r) };
        bnorm = bnorm.max(b.abs());
    }
    worst / bnorm.max(f64::MIN_POSITIVE)
}

/// Order in which cells are relaxed within a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Ordering {
    /// Row-major.
    #[default]
    Lexicographic,
    /// All cells with even `i + j`, then all with odd `i + j`.
    RedBlack,
}

impl Ordering {
    pub fn as_str(self) -> &'static str {
        match self {
            Ordering::Lexicographic => "lex",
            Ordering::RedBlack => "rb",
        }
    }
}

impl fmt::Display for Ordering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ordering {
    type Err = SorError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lex" | "lexicographic" => Ok(Ordering::Lexicographic),
            "rb" | "red_black" | "red-black" => Ok(Ordering::RedBlack),
            other => Err(SorError::InvalidParams(format!(
                "unknown ordering `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SorParams {
    pub omega: f64,
    /// Stop once the relative residual max-norm is at or below this.
    pub tol: f64,
    /// Sweep cap; `None` means `100 * dim`.
    pub max_sweeps: Option<usize>,
    pub ordering: Ordering,
}

impl Default for SorParams {
    fn default() -> Self {
        Self {
            omega: 1.5,
            tol: 1e-8,
            max_sweeps: None,
            ordering: Ordering::Lexicographic,
        }
    }
}

impl SorParams {
    pub fn new(omega: f64) -> Self {
        Self {
            omega,
            ..Self::default()
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_sweeps(mut self, max_sweeps: usize) -> Self {
        self.max_sweeps = Some(max_sweeps);
        self
    }

    pub fn with_ordering(mut self, ordering: Ordering) -> Self {
        self.ordering = ordering;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.omega.is_finite() {
            return Err(SorError::InvalidParams(format!(
                "omega must be finite, got {}",
                self.omega
            )));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(SorError::InvalidParams(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_sweeps == Some(0) {
            return Err(SorError::InvalidParams(
                "max_sweeps must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn sweep_cap(&self, dim: usize) -> usize {
        self.max_sweeps.unwrap_or_else(|| 100 * dim.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    SweepCap,
    /// A non-finite value appeared, at this unknown (row-major index) when the
    /// sweep itself caught it, or in the residual otherwise.
    Diverged {
        index: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// Sweeps performed.
    pub iterations: usize,
    /// Relative residual of the initial guess followed by one entry per sweep,
    /// so its length is `iterations + 1`.
    pub residual_history: Vec<f64>,
    pub termination: Termination,
    /// Seconds spent iterating, residual evaluation included.
    pub wall_time: f64,
    pub final_iterate: Vec<f64>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    pub fn diverged(&self) -> bool {
        matches!(self.termination, Termination::Diverged { .. })
    }

    pub fn final_residual(&self) -> f64 {
        *self
            .residual_history
            .last()
            .expect("history holds the initial residual")
    }
}

pub(crate) struct Outcome {
    pub iterations: usize,
    pub history: Vec<f64>,
    pub termination: Termination,
    pub wall_time: f64,
}

impl Outcome {
    pub fn into_report(self, final_iterate: Vec<f64>) -> SolveReport {
        SolveReport {
            iterations: self.iterations,
            residual_history: self.history,
            termination: self.termination,
            wall_time: self.wall_time,
            final_iterate,
        }
    }
}

/// Drives a sweep/residual pair to convergence. Shared by the matrix, stencil
/// and fixed-point solvers so all follow the same stopping rule.
pub(crate) fn iterate<S>(
    params: &SorParams,
    cap: usize,
    state: &mut S,
    mut sweep: impl FnMut(&mut S) -> Result<()>,
    mut residual: impl FnMut(&S) -> f64,
) -> Result<Outcome> {
    let start = Instant::now();
    let mut history = vec![residual(state)];
    let mut termination = Termination::SweepCap;
    let mut iterations = 0;
    if history[0] <= params.tol {
        termination = Termination::Converged;
    }
    while termination == Termination::SweepCap && iterations < cap {
        iterations += 1;
        match sweep(state) {
            Ok(()) => {}
            Err(SorError::NonFinite { index }) => {
                history.push(f64::NAN);
                termination = Termination::Diverged { index: Some(index) };
                break;
            }
            Err(e) => return Err(e),
        }
        let r = residual(state);
        history.push(r);
        if !r.is_finite() {
            termination = Termination::Diverged { index: None };
        } else if r <= params.tol {
            termination = Termination::Converged;
        }
    }
    Ok(Outcome {
        iterations,
        history,
        termination,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Iterates SOR steps from `x0` (zero when `None`) until the relative residual
/// reaches `params.tol` or the sweep cap is hit. Only lexicographic ordering is
/// meaningful for a general sparse matrix.
pub fn solve(system: &SparseSystem, params: &SorParams, x0: Option<&[f64]>) -> Result<SolveReport> {
    params.validate()?;
    if params.ordering != Ordering::Lexicographic {
        return Err(SorError::UnsupportedOrdering);
    }
    let parts = split(system)?;
    let dim = system.dim();
    let mut x = match x0 {
        Some(x0) if x0.len() != dim => {
            return Err(SorError::DimensionMismatch {
                expected: dim,
                got: x0.len(),
            })
        }
        Some(x0) => x0.to_vec(),
        None => vec![0.0; dim],
    };
    let outcome = iterate(
        params,
        params.sweep_cap(dim),
        &mut x,
        |x| sor_step_in_place(&parts, x, system.rhs(), params.omega),
        |x| relative_residual(system, x),
    )?;
    Ok(outcome.into_report(x))
}

fn check_dense_dim(dim: usize) -> Result<()> {
    if dim > MAX_DENSE_DIM {
        return Err(SorError::TooLarge {
            dim,
            max: MAX_DENSE_DIM,
        });
    }
    Ok(())
}

/// Dense lower-triangular `D + ωL`.
fn relaxed_lower(parts: &SplitParts, omega: f64) -> DMatrix<f64> {
    let n = parts.dim();
    let mut t = DMatrix::zeros(n, n);
    for i in 0..n {
        t[(i, i)] = parts.diag[i];
    }
    for (i, j, v) in parts.lower.triplets() {
        t[(i, j)] = omega * v;
    }
    t
}

/// Solves `T y = rhs` for lower-triangular `T`, column by column.
fn forward_solve(t: &DMatrix<f64>, rhs: &mut DMatrix<f64>) {
    let n = t.nrows();
    for col in 0..rhs.ncols() {
        for i in 0..n {
            let mut s = rhs[(i, col)];
            for j in 0..i {
                s -= t[(i, j)] * rhs[(j, col)];
            }
            rhs[(i, col)] = s / t[(i, i)];
        }
    }
}

/// The SOR iteration matrix `M = (D + ωL)⁻¹ [(1-ω)D - ωU]`, materialized densely.
pub fn iteration_matrix(parts: &SplitParts, omega: f64) -> Result<DMatrix<f64>> {
    let n = parts.dim();
    check_dense_dim(n)?;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = (1.0 - omega) * parts.diag[i];
    }
    for (i, j, v) in parts.upper.triplets() {
        m[(i, j)] = -omega * v;
    }
    forward_solve(&relaxed_lower(parts, omega), &mut m);
    Ok(m)
}

/// The affine part `c = ω (D + ωL)⁻¹ b` of the SOR map `x ↦ M x + c`.
pub fn iteration_offset(parts: &SplitParts, b: &[f64], omega: f64) -> Result<DVector<f64>> {
    let n = parts.dim();
    check_dense_dim(n)?;
    if b.len() != n {
        return Err(SorError::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    let mut c = DMatrix::from_iterator(n, 1, b.iter().map(|v| omega * v));
    forward_solve(&relaxed_lower(parts, omega), &mut c);
    Ok(c.column(0).into_owned())
}

const POWER_MAX_ITERS: usize = 20_000;

/// Largest eigenvalue modulus of a small dense matrix.
///
/// Power iteration is tried first and accepted once its Rayleigh quotient is a
/// certified eigenvalue (small eigen-residual). Spectra whose dominant part is
/// a complex pair or a `±λ` pair never settle under power iteration; those fall
/// back to a real Schur decomposition.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(SorError::Malformed(format!(
            "matrix is {}x{}, expected square",
            n,
            m.ncols()
        )));
    }
    check_dense_dim(n)?;
    if n == 0 {
        return Ok(0.0);
    }
    if let Some(rho) = power_iteration(m) {
        return Ok(rho);
    }
    let schur = Schur::try_new(m.clone(), 1e-14, 100_000).ok_or(SorError::EigenNoConvergence)?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

fn power_iteration(m: &DMatrix<f64>) -> Option<f64> {
    let n = m.nrows();
    let scale = m.norm();
    if scale == 0.0 {
        return Some(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    v /= v.norm();
    let mut previous = f64::INFINITY;
    for _ in 0..POWER_MAX_ITERS {
        let w = m * &v;
        let norm = w.norm();
        if norm == 0.0 {
            // v landed in the null space; the start vector was degenerate
            return None;
        }
        let rayleigh = v.dot(&w);
        let residual = (&w - &v * rayleigh).norm();
        if residual <= 1e-12 * scale && (rayleigh.abs() - previous).abs() <= 1e-12 * scale {
            return Some(rayleigh.abs());
        }
        previous = rayleigh.abs();
        v = w / norm;
    }
    None
}
