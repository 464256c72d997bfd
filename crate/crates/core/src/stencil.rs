//! In-place SOR sweeps on the mesh, without assembling the matrix.
//!
//! Every cell update is
//! `u ← (1-ω) u + (ω/4) (u_up + u_down + u_right + h² f + u_left)`.
//!
//! Red cells have even `i + j`. A red cell's four neighbours are all black or
//! on the boundary, so updates within one colour never read each other and can
//! run in any order or concurrently. A red-black sweep relaxes every red cell,
//! then every black cell.
//!
//! The parallel red-black path splits each colour phase further by row parity.
//! While the even rows of one colour are written, the odd rows are only read,
//! and the other way round. Each row can then be handed out as its own `&mut`
//! slice. Since same-colour updates are independent, the split does not
//! change any value.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Result, SorError};
use crate::problem::{Mesh2D, PoissonProblem};
use crate::splitting::{iterate, Ordering, SolveReport, SorParams};

/// How red-black colour phases are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Rows of a colour phase are relaxed on the rayon pool. Without the
    /// `parallel` feature this runs sequentially.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Red or black, by parity of `i + j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Color {
    Red,
    Black,
}

impl Color {
    fn parity(self) -> usize {
        match self {
            Color::Red => 0,
            Color::Black => 1,
        }
    }

    pub fn of(i: usize, j: usize) -> Self {
        if (i + j).is_multiple_of(2) {
            Color::Red
        } else {
            Color::Black
        }
    }
}

/// Interior cells `(i, j)` of one colour, row-major.
pub fn color_cells(n: usize, color: Color) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| Color::of(i, j) == color)
        .collect()
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn relax(
    keep: f64,
    quarter: f64,
    center: f64,
    up: f64,
    down: f64,
    right: f64,
    hf: f64,
    left: f64,
) -> f64 {
    keep * center + quarter * (up + down + right + hf + left)
}

/// Rows per block of the lexicographic sweep.
const SKEW_ROWS: usize = 8;

/// Lexicographic update of the `R` middle rows of `rows`, which holds `R + 2`
/// consecutive grid rows. Row `r` runs one column behind row `r - 1`.
/// `hf` holds the scaled forcing of the updated rows. Returns false when some
/// new value is not finite.
#[inline(always)]
fn sweep_block<const R: usize>(
    rows: &mut [f64],
    hf: &[f64],
    n: usize,
    keep: f64,
    quarter: f64,
) -> bool {
    let stride = n + 2;
    debug_assert!(rows.len() == (R + 2) * stride && hf.len() == R * n);
    let mut chunks = rows.chunks_exact_mut(stride);
    let mut next = || chunks.next().expect("R + 2 rows");
    let up: &[f64] = next();
    let mut mid: [&mut [f64]; R] = std::array::from_fn(|_| next());
    let down: &[f64] = next();
    let hf: [&[f64]; R] = std::array::from_fn(|r| &hf[r * n..(r + 1) * n]);
    // last value written in each row, i.e. the left neighbour of its next cell
    let mut last: [f64; R] = std::array::from_fn(|r| mid[r][0]);
    let cell = |r: usize, gj: usize, mid: &mut [&mut [f64]; R], last: &mut [f64; R]| {
        let u = if r == 0 { up[gj] } else { last[r - 1] };
        let d = if r + 1 < R { mid[r + 1][gj] } else { down[gj] };
        let row = &mut mid[r];
        let v = relax(
            keep,
            quarter,
            row[gj],
            u,
            d,
            row[gj + 1],
            hf[r][gj - 1],
            last[r],
        );
        row[gj] = v;
        last[r] = v;
    };
    // step t updates column t - r of row r; rows go in descending order so
    // `last[r - 1]` still holds row r - 1 at that column
    let ramp = R.min(n + 1);
    for t in 1..ramp {
        for r in (0..R).rev() {
            if t > r && t - r <= n {
                cell(r, t - r, &mut mid, &mut last);
            }
        }
    }
    for t in ramp..n + 1 {
        for r in (0..R).rev() {
            cell(r, t - r, &mut mid, &mut last);
        }
    }
    for t in ramp.max(n + 1)..n + R {
        for r in (0..R).rev() {
            if t > r && t - r <= n {
                cell(r, t - r, &mut mid, &mut last);
            }
        }
    }
    // every update adds in its left neighbour and neither addition nor scaling
    // turns a non-finite value finite, so a row is finite iff its last cell is
    last.iter().all(|v| v.is_finite())
}

/// `max(a, b)` that keeps NaN once seen.
#[inline(always)]
fn max_nan(a: f64, b: f64) -> f64 {
    if b > a || b.is_nan() {
        b
    } else {
        a
    }
}

/// The first non-finite interior cell in `rows` (grid row indices), row-major.
fn first_non_finite(grid: &[f64], n: usize, rows: std::ops::Range<usize>) -> SorError {
    let stride = n + 2;
    rows.flat_map(|gi| (1..=n).map(move |gj| (gi, gj)))
        .find(|&(gi, gj)| !grid[gi * stride + gj].is_finite())
        .map(|(gi, gj)| SorError::NonFiniteCell {
            row: gi - 1,
            col: gj - 1,
        })
        .expect("a non-finite value was written")
}

/// Per-problem data the sweeps and the residual need, computed once.
#[derive(Debug, Clone)]
pub struct PoissonStencil {
    n: usize,
    /// `h² f` per interior cell, row-major.
    scaled_forcing: Vec<f64>,
    /// Assembled right-hand side, row-major.
    rhs: Vec<f64>,
    rhs_norm: f64,
    diag: f64,
    off: f64,
}

impl PoissonStencil {
    /// `mesh` supplies the boundary ring that is folded into the right-hand side.
    pub fn new(problem: &PoissonProblem, mesh: &Mesh2D) -> Result<Self> {
        problem.check_mesh(mesh)?;
        let n = problem.n();
        let h = mesh.h();
        let h2 = h * h;
        let inv_h2 = 1.0 / h2;
        let scaled_forcing = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| {
                let (x, y) = mesh.point(i, j);
                h2 * problem.forcing(x, y)
            })
            .collect();
        let rhs = problem.rhs(mesh);
        let rhs_norm = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(Self {
            n,
            scaled_forcing,
            rhs,
            rhs_norm,
            diag: 4.0 * inv_h2,
            off: -inv_h2,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn check(&self, mesh: &Mesh2D, omega: f64) -> Result<()> {
        if mesh.n() != self.n {
            return Err(SorError::DimensionMismatch {
                expected: self.n,
                got: mesh.n(),
            });
        }
        if !omega.is_finite() {
            return Err(SorError::InvalidParams(format!(
                "omega must be finite, got {omega}"
            )));
        }
        Ok(())
    }

    /// One row-major pass using already-updated neighbours where available.
    ///
    /// Rows are processed in blocks of [`SKEW_ROWS`], with row `r` of a block
    /// running one column behind row `r - 1`. Every cell sees the same operands
    /// as in the plain row-major loop, so the result is bit-identical, but the
    /// rows of a block form independent dependency chains.
    pub fn sweep_lexicographic(&self, mesh: &mut Mesh2D, omega: f64) -> Result<()> {
        self.lexicographic_pass(mesh, omega, |_, _| {})
    }

    /// Lexicographic sweep followed by [`Self::relative_residual`] of the new
    /// iterate, with the residual of each row computed as soon as the row and
    /// both its neighbours are final. Same values as the two calls in sequence.
    pub fn sweep_lexicographic_with_residual(&self, mesh: &mut Mesh2D, omega: f64) -> Result<f64> {
        let mut worst = 0.0;
        let mut done = 0;
        self.lexicographic_pass(mesh, omega, |grid, ready| {
            for i in done..ready {
                worst = max_nan(worst, self.row_residual(grid, i));
            }
            done = ready;
        })?;
        Ok(self.normalize(worst))
    }

    /// Runs the blocked sweep, calling `rows_ready(grid, k)` whenever interior
    /// rows `0..k` and their neighbours hold their final values.
    fn lexicographic_pass(
        &self,
        mesh: &mut Mesh2D,
        omega: f64,
        mut rows_ready: impl FnMut(&[f64], usize),
    ) -> Result<()> {
        self.check(mesh, omega)?;
        let n = self.n;
        let stride = n + 2;
        let (keep, quarter) = (1.0 - omega, 0.25 * omega);
        let grid = mesh.grid_mut();
        let mut gi = 1;
        while gi <= n {
            let rows = if gi + SKEW_ROWS <= n + 1 {
                SKEW_ROWS
            } else {
                1
            };
            let g = (gi - 1) * stride..(gi + rows + 1) * stride;
            let f = (gi - 1) * n..(gi + rows - 1) * n;
            let finite = if rows == SKEW_ROWS {
                sweep_block::<SKEW_ROWS>(&mut grid[g], &self.scaled_forcing[f], n, keep, quarter)
            } else {
                sweep_block::<1>(&mut grid[g], &self.scaled_forcing[f], n, keep, quarter)
            };
            if !finite {
                return Err(first_non_finite(grid, n, gi..gi + rows));
            }
            gi += rows;
            // interior rows 0..gi - 1 are updated; the last of them still
            // waits for its lower neighbour
            rows_ready(grid, gi.saturating_sub(2).min(n));
        }
        rows_ready(grid, n);
        Ok(())
    }

    /// Plain row-major loop, kept as the reference for the blocked sweep.
    #[cfg(test)]
    fn sweep_lexicographic_rowwise(&self, mesh: &mut Mesh2D, omega: f64) -> Result<()> {
        self.check(mesh, omega)?;
        let n = self.n;
        let stride = n + 2;
        let (keep, quarter) = (1.0 - omega, 0.25 * omega);
        let grid = mesh.grid_mut();
        for gi in 1..=n {
            for gj in 1..=n {
                let k = gi * stride + gj;
                let hf = self.scaled_forcing[(gi - 1) * n + gj - 1];
                let v = relax(
                    keep,
                    quarter,
                    grid[k],
                    grid[k - stride],
                    grid[k + stride],
                    grid[k + 1],
                    hf,
                    grid[k - 1],
                );
                grid[k] = v;
            }
            if grid[gi * stride + 1..gi * stride + n + 1]
                .iter()
                .any(|v| !v.is_finite())
            {
                return Err(first_non_finite(grid, n, gi..gi + 1));
            }
        }
        Ok(())
    }

    /// Red phase, then black phase.
    pub fn sweep_red_black(&self, mesh: &mut Mesh2D, omega: f64, exec: Execution) -> Result<()> {
        self.check(mesh, omega)?;
        for color in [Color::Red, Color::Black] {
            self.relax_color(mesh, omega, color, exec)?;
        }
        Ok(())
    }

    fn relax_color(
        &self,
        mesh: &mut Mesh2D,
        omega: f64,
        color: Color,
        exec: Execution,
    ) -> Result<()> {
        let n = self.n;
        let stride = n + 2;
        let (keep, quarter) = (1.0 - omega, 0.25 * omega);
        let grid = mesh.grid_mut();
        // grid row gi holds interior row gi - 1; a cell's colour is the parity of gi + gj
        for row_parity in [1, 0] {
            let mut targets: Vec<(usize, &mut [f64])> = Vec::with_capacity(n / 2 + 1);
            let mut shared: Vec<Option<&[f64]>> = Vec::with_capacity(stride);
            for (gi, row) in grid.chunks_mut(stride).enumerate() {
                if (1..=n).contains(&gi) && gi % 2 == row_parity {
                    targets.push((gi, row));
                    shared.push(None);
                } else {
                    shared.push(Some(row));
                }
            }
            let kernel = |(gi, row): &mut (usize, &mut [f64])| -> Option<usize> {
                let gi = *gi;
                let up = shared[gi - 1].expect("neighbour rows are not written in this phase");
                let down = shared[gi + 1].expect("neighbour rows are not written in this phase");
                let hf = &self.scaled_forcing[(gi - 1) * n..gi * n];
                let first = if (gi + 1) % 2 == color.parity() { 1 } else { 2 };
                let mut bad = None;
                for gj in (first..=n).step_by(2) {
                    let v = relax(
                        keep,
                        quarter,
                        row[gj],
                        up[gj],
                        down[gj],
                        row[gj + 1],
                        hf[gj - 1],
                        row[gj - 1],
                    );
                    if !v.is_finite() && bad.is_none() {
                        bad = Some(gj - 1);
                    }
                    row[gj] = v;
                }
                bad
            };
            let failures: Vec<Option<usize>> = match exec {
                #[cfg(feature = "parallel")]
                Execution::Parallel => targets.par_iter_mut().map(kernel).collect(),
                _ => targets.iter_mut().map(kernel).collect(),
            };
            if let Some((k, col)) = failures
                .iter()
                .enumerate()
                .find_map(|(k, c)| c.map(|c| (k, c)))
            {
                return Err(SorError::NonFiniteCell {
                    row: targets[k].0 - 1,
                    col,
                });
            }
        }
        Ok(())
    }

    /// Red-black sweep visiting each colour's cells in the given order. Each
    /// list must be a permutation of [`color_cells`] for its colour.
    pub fn sweep_red_black_in_order(
        &self,
        mesh: &mut Mesh2D,
        omega: f64,
        red: &[(usize, usize)],
        black: &[(usize, usize)],
    ) -> Result<()> {
        self.check(mesh, omega)?;
        let n = self.n;
        for (color, order) in [(Color::Red, red), (Color::Black, black)] {
            let mut seen = vec![false; n * n];
            for &(i, j) in order {
                if i >= n
                    || j >= n
                    || Color::of(i, j) != color
                    || std::mem::replace(&mut seen[i * n + j], true)
                {
                    return Err(SorError::InvalidParams(format!(
                        "cell ({i}, {j}) is not a fresh {color:?} cell"
                    )));
                }
            }
            if order.len() != color_cells(n, color).len() {
                return Err(SorError::InvalidParams(format!(
                    "{color:?} order is incomplete"
                )));
            }
        }
        let stride = n + 2;
        let (keep, quarter) = (1.0 - omega, 0.25 * omega);
        let grid = mesh.grid_mut();
        for &(i, j) in red.iter().chain(black) {
            let k = (i + 1) * stride + j + 1;
            let v = relax(
                keep,
                quarter,
                grid[k],
                grid[k - stride],
                grid[k + stride],
                grid[k + 1],
                self.scaled_forcing[i * n + j],
                grid[k - 1],
            );
            if !v.is_finite() {
                return Err(SorError::NonFiniteCell { row: i, col: j });
            }
            grid[k] = v;
        }
        Ok(())
    }

    /// `‖b - A u‖∞ / max(‖b‖∞, f64::MIN_POSITIVE)` evaluated on the mesh, with
    /// the products summed in the same order as the assembled matrix rows.
    /// NaN when some residual component is NaN.
    pub fn relative_residual(&self, mesh: &Mesh2D) -> f64 {
        let grid = mesh.grid();
        let worst = (0..self.n).fold(0.0, |w, i| max_nan(w, self.row_residual(grid, i)));
        self.normalize(worst)
    }

    fn normalize(&self, worst: f64) -> f64 {
        worst / self.rhs_norm.max(f64::MIN_POSITIVE)
    }

    /// Largest `|b - A u|` over interior row `i`, or NaN.
    fn row_residual(&self, grid: &[f64], i: usize) -> f64 {
        let n = self.n;
        let stride = n + 2;
        let (diag, off) = (self.diag, self.off);
        let rhs = &self.rhs[i * n..(i + 1) * n];
        let base = (i + 1) * stride + 1;
        let edge = |j: usize| {
            let k = base + j;
            let mut ax = 0.0;
            if i > 0 {
                ax += off * grid[k - stride];
            }
            if j > 0 {
                ax += off * grid[k - 1];
            }
            ax += diag * grid[k];
            if j + 1 < n {
                ax += off * grid[k + 1];
            }
            if i + 1 < n {
                ax += off * grid[k + stride];
            }
            (rhs[j] - ax).abs()
        };
        if i == 0 || i + 1 == n || n < 3 {
            return (0..n).fold(0.0, |w, j| max_nan(w, edge(j)));
        }
        // cells with all four neighbours in the interior, on equal-length slices
        let m = n - 2;
        let up = &grid[base + 1 - stride..][..m];
        let left = &grid[base..][..m];
        let center = &grid[base + 1..][..m];
        let right = &grid[base + 2..][..m];
        let down = &grid[base + 1 + stride..][..m];
        let b = &rhs[1..][..m];
        let cell = |k: usize| {
            let ax =
                off * up[k] + off * left[k] + diag * center[k] + off * right[k] + off * down[k];
            (b[k] - ax).abs()
        };
        // four independent lanes so the loop vectorizes; the sums are NaN iff
        // some residual is, since every term is non-negative or NaN
        let mut lanes = [0.0f64; 4];
        let mut sums = [0.0f64; 4];
        let mut k = 0;
        while k + 4 <= m {
            for l in 0..4 {
                let r = cell(k + l);
                lanes[l] = if r > lanes[l] { r } else { lanes[l] };
                sums[l] += r;
            }
            k += 4;
        }
        for k in k..m {
            lanes[0] = max_nan(lanes[0], cell(k));
        }
        if sums.iter().any(|v| v.is_nan()) {
            return f64::NAN;
        }
        lanes
            .into_iter()
            .fold(max_nan(edge(0), edge(n - 1)), max_nan)
    }

    pub fn sweep(
        &self,
        mesh: &mut Mesh2D,
        omega: f64,
        ordering: Ordering,
        exec: Execution,
    ) -> Result<()> {
        match ordering {
            Ordering::Lexicographic => self.sweep_lexicographic(mesh, omega),
            Ordering::RedBlack => self.sweep_red_black(mesh, omega, exec),
        }
    }
}

pub fn sweep_lexicographic(mesh: &mut Mesh2D, problem: &PoissonProblem, omega: f64) -> Result<()> {
    PoissonStencil::new(problem, mesh)?.sweep_lexicographic(mesh, omega)
}

pub fn sweep_red_black(mesh: &mut Mesh2D, problem: &PoissonProblem, omega: f64) -> Result<()> {
    PoissonStencil::new(problem, mesh)?.sweep_red_black(mesh, omega, Execution::default())
}

/// Solves from a zero interior with the default execution mode.
pub fn solve_mesh(problem: &PoissonProblem, params: &SorParams) -> Result<SolveReport> {
    let mut mesh = problem.mesh();
    solve_mesh_with(problem, params, &mut mesh, Execution::default())
}

/// Sweeps `mesh` in place until the stencil residual reaches `params.tol`.
/// The report's `final_iterate` is the flattened interior.
pub fn solve_mesh_with(
    problem: &PoissonProblem,
    params: &SorParams,
    mesh: &mut Mesh2D,
    exec: Execution,
) -> Result<SolveReport> {
    params.validate()?;
    let stencil = PoissonStencil::new(problem, mesh)?;
    let n = problem.n();
    // the residual of the current iterate travels with it, so the
    // lexicographic path can compute it inside the sweep
    let initial = stencil.relative_residual(mesh);
    let mut state = (&mut *mesh, initial);
    let outcome = iterate(
        params,
        params.sweep_cap(n * n),
        &mut state,
        |(mesh, residual)| {
            let swept = match params.ordering {
                Ordering::Lexicographic => {
                    stencil.sweep_lexicographic_with_residual(mesh, params.omega)
                }
                Ordering::RedBlack => stencil
                    .sweep_red_black(mesh, params.omega, exec)
                    .map(|()| stencil.relative_residual(mesh)),
            };
            match swept {
                Ok(r) => {
                    *residual = r;
                    Ok(())
                }
                Err(SorError::NonFiniteCell { row, col }) => Err(SorError::NonFinite {
                    index: row * n + col,
                }),
                Err(e) => Err(e),
            }
        },
        |(_, residual)| *residual,
    )?;
    Ok(outcome.into_report(mesh.interior()))
}
