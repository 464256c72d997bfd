//! Successive over-relaxation for the 5-point Poisson model problem.
//!
//! The crate offers the same iteration in several forms:
//!
//! - [`splitting`]: matrix form on a row-compressed system split as `A = D + L + U`,
//!   with Jacobi and Gauss-Seidel baselines and dense spectral analysis of the
//!   iteration matrix for small systems.
//! - [`stencil`]: in-place sweeps over a [`Mesh2D`], lexicographic or red-black.
//!   Red-black sweeps update each colour in parallel when the `parallel`
//!   feature is enabled.
//! - [`fixed`]: the lexicographic sweep carried out in scaled-integer arithmetic.
//! - [`cycle`]: a statement-tree cost model where every assignment takes one
//!   clock cycle and `par` blocks take as long as their longest branch.
//! - [`bench`]: batch drivers that produce CSV reports over mesh sizes and
//!   relaxation factors.

pub mod bench;
pub mod cycle;
pub mod error;
pub mod fixed;
pub mod problem;
pub mod sparse;
pub mod splitting;
pub mod stencil;

pub use error::{Result, SorError};
pub use problem::{assemble_poisson, manufactured_error, Mesh2D, PoissonProblem};
pub use sparse::{CsrMatrix, SparseSystem};
pub use splitting::{Ordering, SolveReport, SorParams, Termination};
