//! Discrete 2D Poisson model problems on the unit square.
//!
//! The continuous problem is `-Δu = f` on `(0,1)²` with `u = g` on the boundary.
//! Interior unknowns sit at `(x, y) = ((j+1)h, (i+1)h)` for `i, j in 0..n`, with
//! `h = 1/(n+1)`, and are numbered row-major: unknown `k = i*n + j`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Result, SorError};
use crate::sparse::{CsrMatrix, SparseSystem};

/// A scalar function on the unit square.
pub type ScalarField = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Square grid of `n×n` unknowns surrounded by a ring of fixed boundary values.
///
/// Values are stored on the full `(n+2)×(n+2)` grid; grid index `(gi, gj)`
/// sits at `(x, y) = (gj*h, gi*h)`. Sweeps only ever write the interior.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh2D {
    n: usize,
    h: f64,
    values: Vec<f64>,
}

impl Mesh2D {
    /// Zero interior, boundary ring sampled from `boundary`.
    pub fn new(n: usize, boundary: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if n == 0 {
            return Err(SorError::EmptyMesh);
        }
        let h = 1.0 / (n as f64 + 1.0);
        let stride = n + 2;
        let mut values = vec![0.0; stride * stride];
        for gi in 0..stride {
            for gj in 0..stride {
                if gi == 0 || gj == 0 || gi == stride - 1 || gj == stride - 1 {
                    values[gi * stride + gj] = boundary(gj as f64 * h, gi as f64 * h);
                }
            }
        }
        Ok(Self { n, h, values })
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::new(n, |_, _| 0.0)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Row length of the backing grid, `n + 2`.
    pub fn stride(&self) -> usize {
        self.n + 2
    }

    /// Coordinates of interior cell `(i, j)`.
    pub fn point(&self, i: usize, j: usize) -> (f64, f64) {
        ((j + 1) as f64 * self.h, (i + 1) as f64 * self.h)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i + 1) * self.stride() + j + 1]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let stride = self.stride();
        self.values[(i + 1) * stride + j + 1] = value;
    }

    /// Interior values flattened row-major (the unknown ordering of the assembled system).
    pub fn interior(&self) -> Vec<f64> {
        let stride = self.stride();
        (0..self.n)
            .flat_map(|i| {
                self.values[(i + 1) * stride + 1..(i + 1) * stride + 1 + self.n]
                    .iter()
                    .copied()
            })
            .collect()
    }

    pub fn set_interior(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.n * self.n {
            return Err(SorError::DimensionMismatch {
                expected: self.n * self.n,
                got: values.len(),
            });
        }
        let (n, stride) = (self.n, self.stride());
        for (i, row) in values.chunks_exact(n).enumerate() {
            self.values[(i + 1) * stride + 1..(i + 1) * stride + 1 + n].copy_from_slice(row);
        }
        Ok(())
    }

    /// Boundary ring values, in grid row-major order.
    pub fn boundary(&self) -> Vec<f64> {
        let stride = self.stride();
        self.values
            .iter()
            .enumerate()
            .filter(|(idx, _)| {
                let (gi, gj) = (idx / stride, idx % stride);
                gi == 0 || gj == 0 || gi == stride - 1 || gj == stride - 1
            })
            .map(|(_, &v)| v)
            .collect()
    }

    /// The full `(n+2)²` grid including the boundary ring.
    pub fn grid(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn grid_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// `-Δu = f` on the unit square with Dirichlet data `g`, optionally with a known
/// exact solution `u`.
#[derive(Clone)]
pub struct PoissonProblem {
    n: usize,
    forcing: ScalarField,
    dirichlet: ScalarField,
    exact: Option<ScalarField>,
}

impl fmt::Debug for PoissonProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PoissonProblem")
            .field("n", &self.n)
            .field("has_exact", &self.exact.is_some())
            .finish_non_exhaustive()
    }
}

impl PoissonProblem {
    pub fn new(n: usize, forcing: ScalarField, dirichlet: ScalarField) -> Result<Self> {
        if n == 0 {
            return Err(SorError::EmptyMesh);
        }
        Ok(Self {
            n,
            forcing,
            dirichlet,
            exact: None,
        })
    }

    /// Problem with a manufactured solution. The data is checked for
    /// consistency with `exact` on a coarse sample: `-Δu` by central differences
    /// against `f` at interior points, and `u` against `g` along the edges.
    pub fn with_exact(
        n: usize,
        forcing: ScalarField,
        dirichlet: ScalarField,
        exact: ScalarField,
    ) -> Result<Self> {
        check_consistency(&*forcing, &*dirichlet, &*exact)?;
        let mut problem = Self::new(n, forcing, dirichlet)?;
        problem.exact = Some(exact);
        Ok(problem)
    }

    /// `u = sin(πx) sin(πy)`, `f = 2π² u`, homogeneous boundary.
    pub fn manufactured_sine(n: usize) -> Result<Self> {
        Self::with_exact(
            n,
            Arc::new(|x, y| 2.0 * PI * PI * (PI * x).sin() * (PI * y).sin()),
            Arc::new(|_, _| 0.0),
            Arc::new(|x, y| (PI * x).sin() * (PI * y).sin()),
        )
    }

    /// `u = x + y`: harmonic, so the 5-point stencil reproduces it exactly.
    pub fn manufactured_linear(n: usize) -> Result<Self> {
        Self::with_exact(
            n,
            Arc::new(|_, _| 0.0),
            Arc::new(|x, y| x + y),
            Arc::new(|x, y| x + y),
        )
    }

    /// Constant forcing and constant boundary value, no exact solution attached.
    pub fn constant(n: usize, forcing: f64, boundary: f64) -> Result<Self> {
        Self::new(
            n,
            Arc::new(move |_, _| forcing),
            Arc::new(move |_, _| boundary),
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.n as f64 + 1.0)
    }

    pub fn dim(&self) -> usize {
        self.n * self.n
    }

    pub fn forcing(&self, x: f64, y: f64) -> f64 {
        (self.forcing)(x, y)
    }

    pub fn dirichlet(&self, x: f64, y: f64) -> f64 {
        (self.dirichlet)(x, y)
    }

    pub fn exact(&self) -> Option<&ScalarField> {
        self.exact.as_ref()
    }

    /// Mesh with the boundary ring set from the Dirichlet data and a zero interior.
    pub fn mesh(&self) -> Mesh2D {
        Mesh2D::new(self.n, |x, y| self.dirichlet(x, y)).expect("n >= 1 checked at construction")
    }

    /// Checks that `mesh` has the problem's size.
    pub fn check_mesh(&self, mesh: &Mesh2D) -> Result<()> {
        if mesh.n() != self.n {
            return Err(SorError::DimensionMismatch {
                expected: self.n,
                got: mesh.n(),
            });
        }
        Ok(())
    }

    /// Right-hand side of the assembled system: `f` at each unknown plus the
    /// Dirichlet values of its boundary neighbours scaled by `1/h²`.
    ///
    /// Boundary neighbours are folded in the order up, left, right, down.
    pub fn rhs(&self, mesh: &Mesh2D) -> Vec<f64> {
        let n = self.n;
        let inv_h2 = 1.0 / (mesh.h() * mesh.h());
        let stride = mesh.stride();
        let grid = mesh.grid();
        let mut rhs = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let (x, y) = mesh.point(i, j);
                let g = |gi: usize, gj: usize| grid[gi * stride + gj];
                let mut b = self.forcing(x, y);
                if i == 0 {
                    b += g(0, j + 1) * inv_h2;
                }
                if j == 0 {
                    b += g(i + 1, 0) * inv_h2;
                }
                if j == n - 1 {
                    b += g(i + 1, n + 1) * inv_h2;
                }
                if i == n - 1 {
                    b += g(n + 1, j + 1) * inv_h2;
                }
                rhs.push(b);
            }
        }
        rhs
    }
}

fn check_consistency(
    forcing: &(dyn Fn(f64, f64) -> f64 + Send + Sync),
    dirichlet: &(dyn Fn(f64, f64) -> f64 + Send + Sync),
    exact: &(dyn Fn(f64, f64) -> f64 + Send + Sync),
) -> Result<()> {
    const SAMPLES: [f64; 4] = [0.2, 0.4, 0.6, 0.8];
    let delta = 1e-3;
    for &x in &SAMPLES {
        for &y in &SAMPLES {
            let u = exact(x, y);
            let lap = (exact(x + delta, y)
                + exact(x - delta, y)
                + exact(x, y + delta)
                + exact(x, y - delta)
                - 4.0 * u)
                / (delta * delta);
            let f = forcing(x, y);
            if (-lap - f).abs() > 1e-3 * (1.0 + f.abs() + u.abs()) {
                return Err(SorError::InconsistentExact(format!(
                    "-Δu = {} but f = {f} at ({x}, {y})",
                    -lap
                )));
            }
        }
    }
    let edge_points = [0.0, 0.25, 0.5, 0.75, 1.0];
    for &t in &edge_points {
        for (x, y) in [(t, 0.0), (t, 1.0), (0.0, t), (1.0, t)] {
            let (u, g) = (exact(x, y), dirichlet(x, y));
            if (u - g).abs() > 1e-9 * (1.0 + u.abs()) {
                return Err(SorError::InconsistentExact(format!(
                    "u = {u} but g = {g} at ({x}, {y})"
                )));
            }
        }
    }
    Ok(())
}

/// The 5-point Laplacian system for `problem`: diagonal `4/h²`, grid neighbours
/// `-1/h²`, Dirichlet values folded into the right-hand side.
pub fn assemble_poisson(problem: &PoissonProblem) -> SparseSystem {
    let n = problem.n();
    let mesh = problem.mesh();
    let inv_h2 = 1.0 / (mesh.h() * mesh.h());
    let diag = 4.0 * inv_h2;
    let off = -inv_h2;

    let mut row_ptr = Vec::with_capacity(n * n + 1);
    let mut col_idx = Vec::with_capacity(5 * n * n);
    let mut values = Vec::with_capacity(5 * n * n);
    row_ptr.push(0);
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            if i > 0 {
                col_idx.push(k - n);
                values.push(off);
            }
            if j > 0 {
                col_idx.push(k - 1);
                values.push(off);
            }
            col_idx.push(k);
            values.push(diag);
            if j + 1 < n {
                col_idx.push(k + 1);
                values.push(off);
            }
            if i + 1 < n {
                col_idx.push(k + n);
                values.push(off);
            }
            row_ptr.push(col_idx.len());
        }
    }
    let matrix = CsrMatrix::new(n * n, n * n, row_ptr, col_idx, values)
        .expect("5-point assembly produces sorted rows");
    SparseSystem::new(matrix, problem.rhs(&mesh)).expect("square by construction")
}

/// Max-norm distance between the mesh interior and `exact` sampled at the grid points.
pub fn manufactured_error(mesh: &Mesh2D, exact: impl Fn(f64, f64) -> f64) -> f64 {
    let n = mesh.n();
    let mut err: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let (x, y) = mesh.point(i, j);
            err = err.max((mesh.get(i, j) - exact(x, y)).abs());
        }
    }
    err
}
