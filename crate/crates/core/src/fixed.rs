//! Scaled-integer arithmetic and an SOR sweep carried out entirely in it.
//!
//! A [`QFixed`] holds `raw` with value `raw / 2^f`. Every result must satisfy
//! `|raw| < 2^(w-1)` for word width `w`, otherwise the operation reports
//! [`FixedError::Overflow`]. Products and quotients are formed at double width
//! (`i128`) and rounded to nearest, ties to even.
//!
//! The default format is 16 fractional bits in a 64-bit word, leaving 47
//! integer bits. That is ample for the `1/h²` scale at `n = 2048`.

use thiserror::Error;

use crate::error::{Result, SorError};
use crate::problem::{Mesh2D, PoissonProblem};
use crate::splitting::{iterate, Ordering, SolveReport, SorParams};
use crate::stencil::{Color, PoissonStencil};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FixedError {
    #[error("value does not fit the fixed-point word")]
    Overflow,
    #[error("division by zero")]
    DivideByZero,
    #[error("operands use different formats ({0:?} vs {1:?})")]
    FormatMismatch(QFormat, QFormat),
    #[error("invalid format: {frac_bits} fractional bits in a {word_bits}-bit word")]
    InvalidFormat { frac_bits: u32, word_bits: u32 },
}

/// Fractional bit count and total word width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QFormat {
    frac_bits: u32,
    word_bits: u32,
}

impl Default for QFormat {
    fn default() -> Self {
        Self {
            frac_bits: 16,
            word_bits: 64,
        }
    }
}

impl QFormat {
    pub fn new(frac_bits: u32, word_bits: u32) -> Result<Self, FixedError> {
        if word_bits == 0 || word_bits > 64 || frac_bits >= word_bits {
            return Err(FixedError::InvalidFormat {
                frac_bits,
                word_bits,
            });
        }
        Ok(Self {
            frac_bits,
            word_bits,
        })
    }

    /// `frac_bits` fractional bits in a 64-bit word.
    pub fn with_frac_bits(frac_bits: u32) -> Result<Self, FixedError> {
        Self::new(frac_bits, 64)
    }

    pub fn frac_bits(self) -> u32 {
        self.frac_bits
    }

    pub fn word_bits(self) -> u32 {
        self.word_bits
    }

    /// Value of one unit in the last place, `2^-f`.
    pub fn ulp(self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    fn fit(self, raw: i128) -> Result<QFixed, FixedError> {
        let bound = 1i128 << (self.word_bits - 1);
        if raw <= -bound || raw >= bound {
            return Err(FixedError::Overflow);
        }
        Ok(QFixed {
            raw: raw as i64,
            format: self,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QFixed {
    raw: i64,
    format: QFormat,
}

impl QFixed {
    pub fn from_raw(raw: i64, format: QFormat) -> Result<Self, FixedError> {
        format.fit(raw as i128)
    }

    pub fn zero(format: QFormat) -> Self {
        Self { raw: 0, format }
    }

    pub fn raw(self) -> i64 {
        self.raw
    }

    pub fn format(self) -> QFormat {
        self.format
    }

    pub fn frac_bits(self) -> u32 {
        self.format.frac_bits
    }

    pub fn word_bits(self) -> u32 {
        self.format.word_bits
    }

    pub fn to_f64(self) -> f64 {
        decode(self)
    }
}

/// `x` rounded to the nearest multiple of `2^-f`, ties to even, in a 64-bit word.
pub fn encode(x: f64, frac_bits: u32) -> Result<QFixed, FixedError> {
    encode_in(x, QFormat::with_frac_bits(frac_bits)?)
}

pub fn encode_in(x: f64, format: QFormat) -> Result<QFixed, FixedError> {
    if !x.is_finite() {
        return Err(FixedError::Overflow);
    }
    // scaling by a power of two is exact short of overflow
    let scaled = (x * (format.frac_bits as f64).exp2()).round_ties_even();
    let limit = ((format.word_bits - 1) as f64).exp2();
    if scaled.abs() >= limit {
        return Err(FixedError::Overflow);
    }
    format.fit(scaled as i128)
}

/// `raw / 2^f`, exact whenever `|raw| ≤ 2^53`.
pub fn decode(q: QFixed) -> f64 {
    q.raw as f64 * (-(q.format.frac_bits as f64)).exp2()
}

fn same_format(a: QFixed, b: QFixed) -> Result<QFormat, FixedError> {
    if a.format != b.format {
        return Err(FixedError::FormatMismatch(a.format, b.format));
    }
    Ok(a.format)
}

/// `v / 2^shift` rounded to nearest, ties to even.
fn round_shift(v: i128, shift: u32) -> i128 {
    if shift == 0 {
        return v;
    }
    let floor = v >> shift;
    let rem = v - (floor << shift);
    let half = 1i128 << (shift - 1);
    if rem > half || (rem == half && floor & 1 == 1) {
        floor + 1
    } else {
        floor
    }
}

/// `num / den` rounded to nearest, ties to even. `den` must be nonzero.
fn round_div(num: i128, den: i128) -> i128 {
    let q = num / den;
    let r = num % den;
    let twice = 2 * r.abs();
    let den_abs = den.abs();
    if twice > den_abs || (twice == den_abs && q & 1 == 1) {
        q + if (num < 0) == (den < 0) { 1 } else { -1 }
    } else {
        q
    }
}

pub fn q_add(a: QFixed, b: QFixed) -> Result<QFixed, FixedError> {
    same_format(a, b)?.fit(a.raw as i128 + b.raw as i128)
}

pub fn q_sub(a: QFixed, b: QFixed) -> Result<QFixed, FixedError> {
    same_format(a, b)?.fit(a.raw as i128 - b.raw as i128)
}

pub fn q_mul(a: QFixed, b: QFixed) -> Result<QFixed, FixedError> {
    let format = same_format(a, b)?;
    format.fit(round_shift(a.raw as i128 * b.raw as i128, format.frac_bits))
}

pub fn q_div(a: QFixed, b: QFixed) -> Result<QFixed, FixedError> {
    let format = same_format(a, b)?;
    if b.raw == 0 {
        return Err(FixedError::DivideByZero);
    }
    format.fit(round_div(
        (a.raw as i128) << format.frac_bits,
        b.raw as i128,
    ))
}

/// Mesh values held as raw fixed-point integers on the full `(n+2)²` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedMesh {
    n: usize,
    format: QFormat,
    raw: Vec<i64>,
}

impl FixedMesh {
    /// Encodes every grid value, boundary ring included.
    pub fn from_mesh(mesh: &Mesh2D, format: QFormat) -> Result<Self> {
        let stride = mesh.stride();
        let raw = mesh
            .grid()
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let (gi, gj) = (k / stride, k % stride);
                let on_ring = gi == 0 || gj == 0 || gi == stride - 1 || gj == stride - 1;
                encode_in(v, format).map(QFixed::raw).map_err(|source| {
                    if on_ring {
                        SorError::Fixed(source)
                    } else {
                        SorError::FixedCell {
                            row: gi - 1,
                            col: gj - 1,
                            source,
                        }
                    }
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            n: mesh.n(),
            format,
            raw,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn format(&self) -> QFormat {
        self.format
    }

    pub fn get(&self, i: usize, j: usize) -> QFixed {
        QFixed {
            raw: self.raw[(i + 1) * (self.n + 2) + j + 1],
            format: self.format,
        }
    }

    /// Raw integers of the full grid.
    pub fn raw_grid(&self) -> &[i64] {
        &self.raw
    }

    /// Decodes into `mesh`, which must have the same size.
    pub fn decode_into(&self, mesh: &mut Mesh2D) {
        assert_eq!(mesh.n(), self.n, "mesh size mismatch");
        for (dst, &raw) in mesh.grid_mut().iter_mut().zip(&self.raw) {
            *dst = decode(QFixed {
                raw,
                format: self.format,
            });
        }
    }

    pub fn to_mesh(&self) -> Mesh2D {
        let mut mesh = Mesh2D::zeros(self.n).expect("n >= 1");
        self.decode_into(&mut mesh);
        mesh
    }
}

/// `h² f` per interior cell in fixed point, plus the relaxation weights.
#[derive(Debug, Clone)]
pub struct FixedStencil {
    n: usize,
    format: QFormat,
    scaled_forcing: Vec<QFixed>,
}

impl FixedStencil {
    pub fn new(problem: &PoissonProblem, format: QFormat) -> Result<Self> {
        let n = problem.n();
        let h = problem.h();
        let h2 = h * h;
        let scaled_forcing = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| {
                let (x, y) = ((j + 1) as f64 * h, (i + 1) as f64 * h);
                encode_in(h2 * problem.forcing(x, y), format).map_err(|source| {
                    SorError::FixedCell {
                        row: i,
                        col: j,
                        source,
                    }
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            n,
            format,
            scaled_forcing,
        })
    }

    /// `(1 - ω, ω / 4)`. The quarter is a rounded right shift by two, exact
    /// whenever `ω` has at most `f - 2` fractional bits (e.g. 1.5 at any `f ≥ 3`).
    fn weights(&self, omega: QFixed) -> Result<(QFixed, QFixed), FixedError> {
        let one = encode_in(1.0, self.format)?;
        let keep = q_sub(one, omega)?;
        let quarter = self.format.fit(round_shift(omega.raw as i128, 2))?;
        Ok((keep, quarter))
    }

    fn relax_cell(
        &self,
        mesh: &mut FixedMesh,
        i: usize,
        j: usize,
        keep: QFixed,
        quarter: QFixed,
    ) -> Result<()> {
        let stride = self.n + 2;
        let k = (i + 1) * stride + j + 1;
        let format = self.format;
        let at = |raw: i64| QFixed { raw, format };
        let cell = || -> Result<QFixed, FixedError> {
            let sum = q_add(at(mesh.raw[k - stride]), at(mesh.raw[k + stride]))?;
            let sum = q_add(sum, at(mesh.raw[k + 1]))?;
            let sum = q_add(sum, self.scaled_forcing[i * self.n + j])?;
            let sum = q_add(sum, at(mesh.raw[k - 1]))?;
            q_add(q_mul(keep, at(mesh.raw[k]))?, q_mul(quarter, sum)?)
        };
        let v = cell().map_err(|source| SorError::FixedCell {
            row: i,
            col: j,
            source,
        })?;
        mesh.raw[k] = v.raw;
        Ok(())
    }

    fn check(&self, mesh: &FixedMesh, omega: QFixed) -> Result<()> {
        if mesh.n != self.n {
            return Err(SorError::DimensionMismatch {
                expected: self.n,
                got: mesh.n,
            });
        }
        if mesh.format != self.format || omega.format != self.format {
            return Err(FixedError::FormatMismatch(mesh.format, omega.format).into());
        }
        Ok(())
    }

    /// Row-major pass, same update rule as the float lexicographic sweep.
    pub fn sweep_lexicographic(&self, mesh: &mut FixedMesh, omega: QFixed) -> Result<()> {
        self.check(mesh, omega)?;
        let (keep, quarter) = self.weights(omega)?;
        for i in 0..self.n {
            for j in 0..self.n {
                self.relax_cell(mesh, i, j, keep, quarter)?;
            }
        }
        Ok(())
    }

    /// Red cells, then black cells, each colour row-major.
    pub fn sweep_red_black(&self, mesh: &mut FixedMesh, omega: QFixed) -> Result<()> {
        self.check(mesh, omega)?;
        let (keep, quarter) = self.weights(omega)?;
        for color in [Color::Red, Color::Black] {
            for i in 0..self.n {
                for j in 0..self.n {
                    if Color::of(i, j) == color {
                        self.relax_cell(mesh, i, j, keep, quarter)?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// One lexicographic sweep in fixed-point arithmetic.
pub fn sweep_fixed(mesh: &mut FixedMesh, problem: &PoissonProblem, omega: QFixed) -> Result<()> {
    FixedStencil::new(problem, mesh.format)?.sweep_lexicographic(mesh, omega)
}

/// Solves in fixed point from the values in `start`. The stopping test decodes
/// the iterate (exactly) and applies the float stencil residual. A fixed-point
/// overflow ends the solve as divergence.
pub fn solve_fixed(
    problem: &PoissonProblem,
    params: &SorParams,
    format: QFormat,
    start: &Mesh2D,
) -> Result<SolveReport> {
    params.validate()?;
    let stencil = FixedStencil::new(problem, format)?;
    let float_stencil = PoissonStencil::new(problem, start)?;
    let omega = encode_in(params.omega, format)?;
    let n = problem.n();
    let mut state = (FixedMesh::from_mesh(start, format)?, start.clone());
    let outcome = iterate(
        params,
        params.sweep_cap(n * n),
        &mut state,
        |(fixed, decoded)| {
            let swept = match params.ordering {
                Ordering::Lexicographic => stencil.sweep_lexicographic(fixed, omega),
                Ordering::RedBlack => stencil.sweep_red_black(fixed, omega),
            };
            match swept {
                Err(SorError::FixedCell {
                    row,
                    col,
                    source: FixedError::Overflow,
                }) => {
                    return Err(SorError::NonFinite {
                        index: row * n + col,
                    })
                }
                other => other?,
            }
            fixed.decode_into(decoded);
            Ok(())
        },
        |(_, decoded)| float_stencil.relative_residual(decoded),
    )?;
    let (_, decoded) = state;
    Ok(outcome.into_report(decoded.interior()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(x: f64) -> QFixed {
        encode(x, 16).unwrap()
    }

    #[test]
    fn encode_examples() {
        assert_eq!(q(1.5).raw(), 98304);
        for f in [0, 8, 16, 30] {
            assert_eq!(encode(0.0, f).unwrap().raw(), 0);
        }
        let pi = std::f64::consts::PI;
        assert!((decode(q(pi)) - pi).abs() <= 2f64.powi(-17));
    }

    #[test]
    fn encode_rounds_ties_to_even() {
        // 2^-17 is half an ulp at f = 16
        assert_eq!(q(2f64.powi(-17)).raw(), 0);
        assert_eq!(q(3.0 * 2f64.powi(-17)).raw(), 2);
        assert_eq!(q(-3.0 * 2f64.powi(-17)).raw(), -2);
    }

    #[test]
    fn encode_rejects_out_of_range() {
        assert_eq!(encode(2f64.powi(47), 16), Err(FixedError::Overflow));
        assert!(encode(2f64.powi(47) - 1.0, 16).is_ok());
        assert_eq!(encode(f64::NAN, 16), Err(FixedError::Overflow));
        let narrow = QFormat::new(8, 16).unwrap();
        assert_eq!(encode_in(128.0, narrow), Err(FixedError::Overflow));
        assert_eq!(encode_in(127.99, narrow).unwrap().raw(), 32765);
    }

    #[test]
    fn decode_examples() {
        let fmt = QFormat::default();
        assert_eq!(decode(QFixed::from_raw(1, fmt).unwrap()), 2f64.powi(-16));
        assert_eq!(decode(QFixed::from_raw(-(1 << 16), fmt).unwrap()), -1.0);
    }

    #[test]
    fn arithmetic_examples() {
        assert_eq!(q_mul(q(0.5), q(0.5)).unwrap(), q(0.25));
        assert_eq!(q_add(q(3.75), q(-3.75)).unwrap(), q(0.0));
        let third = decode(q_div(q(1.0), q(3.0)).unwrap());
        assert!((third - 1.0 / 3.0).abs() <= 2f64.powi(-16));
        assert_eq!(q_div(q(1.0), q(0.0)), Err(FixedError::DivideByZero));
        assert_eq!(q_div(q(-1.0), q(3.0)).unwrap().raw(), -21845);
        assert_eq!(q_div(q(1.0), q(-3.0)).unwrap().raw(), -21845);
        assert_eq!(q_div(q(2.0), q(3.0)).unwrap().raw(), 43691);
    }

    #[test]
    fn mixed_formats_are_rejected() {
        let a = encode(1.0, 16).unwrap();
        let b = encode(1.0, 12).unwrap();
        assert!(matches!(q_add(a, b), Err(FixedError::FormatMismatch(..))));
        assert!(QFormat::new(64, 64).is_err());
        assert!(QFormat::new(16, 65).is_err());
    }

    #[test]
    fn overflow_is_reported() {
        assert!(QFixed::from_raw(i64::MAX, QFormat::default()).is_ok());
        let big = QFixed::from_raw(i64::MIN, QFormat::default()).unwrap_err();
        assert_eq!(big, FixedError::Overflow);
        let near = encode(2f64.powi(46), 16).unwrap();
        assert_eq!(q_add(near, near), Err(FixedError::Overflow));
        assert_eq!(q_mul(near, q(4.0)), Err(FixedError::Overflow));
    }

    #[test]
    fn round_shift_ties() {
        assert_eq!(round_shift(6, 2), 2); // 1.5 -> 2
        assert_eq!(round_shift(10, 2), 2); // 2.5 -> 2
        assert_eq!(round_shift(-6, 2), -2);
        assert_eq!(round_shift(-10, 2), -2);
        assert_eq!(round_shift(-7, 2), -2);
        assert_eq!(round_shift(5, 2), 1);
    }

    #[test]
    fn zero_omega_sweep_is_identity() {
        let problem = PoissonProblem::manufactured_sine(6).unwrap();
        let mut mesh = problem.mesh();
        mesh.set_interior(&(0..36).map(|k| k as f64 / 36.0).collect::<Vec<_>>())
            .unwrap();
        let mut fixed = FixedMesh::from_mesh(&mesh, QFormat::default()).unwrap();
        let before = fixed.clone();
        sweep_fixed(&mut fixed, &problem, q(0.0)).unwrap();
        assert_eq!(fixed, before);
    }

    #[test]
    fn sweep_overflow_carries_position() {
        let problem = PoissonProblem::manufactured_sine(3).unwrap();
        let mut mesh = problem.mesh();
        // the two neighbours of cell (0, 0) sum past the 47 integer bits
        mesh.set(0, 1, 0.9 * 2f64.powi(47));
        mesh.set(1, 0, 0.9 * 2f64.powi(47));
        let format = QFormat::default();
        let mut fixed = FixedMesh::from_mesh(&mesh, format).unwrap();
        let err = FixedStencil::new(&problem, format)
            .unwrap()
            .sweep_lexicographic(&mut fixed, q(1.0))
            .unwrap_err();
        assert!(matches!(
            err,
            SorError::FixedCell {
                row: 0,
                col: 0,
                source: FixedError::Overflow
            }
        ));
    }

    proptest! {
        #[test]
        fn add_sub_are_exact(a in -1e6f64..1e6, b in -1e6f64..1e6) {
            let (qa, qb) = (q(a), q(b));
            prop_assert_eq!(decode(q_add(qa, qb).unwrap()), decode(qa) + decode(qb));
            prop_assert_eq!(decode(q_sub(qa, qb).unwrap()), decode(qa) - decode(qb));
        }

        #[test]
        fn half_width_products_are_exact(a in -1000i64..1000, b in -1000i64..1000) {
            // values with 8 fractional bits at f = 16
            let (x, y) = (a as f64 / 256.0, b as f64 / 256.0);
            prop_assert_eq!(decode(q_mul(q(x), q(y)).unwrap()), x * y);
        }

        #[test]
        fn mul_div_round_to_nearest(a in -1e4f64..1e4, b in 0.01f64..1e3) {
            let (qa, qb) = (q(a), q(b));
            let ulp = 2f64.powi(-16);
            let prod = decode(q_mul(qa, qb).unwrap());
            prop_assert!((prod - decode(qa) * decode(qb)).abs() <= 0.5 * ulp + 1e-9);
            let quot = decode(q_div(qa, qb).unwrap());
            prop_assert!((quot - decode(qa) / decode(qb)).abs() <= 0.5 * ulp + 1e-9);
        }
    }
}
