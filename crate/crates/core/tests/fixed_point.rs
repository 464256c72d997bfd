mod common;

use common::max_abs_diff;
use proptest::prelude::*;
use sor_core::fixed::{
    decode, encode, encode_in, q_add, q_div, q_mul, q_sub, solve_fixed, sweep_fixed, FixedError,
    FixedMesh, QFixed, QFormat,
};
use sor_core::stencil::{solve_mesh, PoissonStencil};
use sor_core::{PoissonProblem, SorParams, Termination};

fn fmt(f: u32) -> QFormat {
    QFormat::with_frac_bits(f).unwrap()
}

/// `r` is the round-to-nearest-even quotient of `num / den`.
fn is_rne_quotient(r: i128, num: i128, den: i128) -> bool {
    let err = (r * den - num).abs() * 2;
    let den = den.abs();
    err < den || (err == den && r % 2 == 0)
}

proptest! {
    #[test]
    fn roundtrip_is_within_half_ulp(x in -1e6f64..1e6, f in 0u32..=30) {
        let q = encode(x, f).unwrap();
        prop_assert!((decode(q) - x).abs() <= (-(f as f64) - 1.0).exp2());
    }

    #[test]
    fn add_and_sub_are_exact(a in -(1i64 << 40)..(1i64 << 40), b in -(1i64 << 40)..(1i64 << 40)) {
        let (qa, qb) = (QFixed::from_raw(a, fmt(16)).unwrap(), QFixed::from_raw(b, fmt(16)).unwrap());
        prop_assert_eq!(q_add(qa, qb).unwrap().raw(), a + b);
        prop_assert_eq!(q_sub(qa, qb).unwrap().raw(), a - b);
        prop_assert_eq!(q_add(qa, QFixed::from_raw(-a, fmt(16)).unwrap()).unwrap().raw(), 0);
    }

    #[test]
    fn mul_and_div_round_to_nearest_even(a in -(1i64 << 36)..(1i64 << 36), b in -(1i64 << 36)..(1i64 << 36), f in 1u32..=24) {
        let (qa, qb) = (QFixed::from_raw(a, fmt(f)).unwrap(), QFixed::from_raw(b, fmt(f)).unwrap());
        if let Ok(p) = q_mul(qa, qb) {
            prop_assert!(is_rne_quotient(p.raw() as i128, a as i128 * b as i128, 1i128 << f));
        }
        if b != 0 {
            if let Ok(q) = q_div(qa, qb) {
                prop_assert!(is_rne_quotient(q.raw() as i128, (a as i128) << f, b as i128));
            }
        } else {
            prop_assert_eq!(q_div(qa, qb), Err(FixedError::DivideByZero));
        }
    }

    #[test]
    fn mul_of_half_precision_values_is_exact(a in -(1i64 << 20)..(1i64 << 20), b in -(1i64 << 20)..(1i64 << 20)) {
        // at most 8 fractional bits each at f = 16
        let (x, y) = (a as f64 / 256.0, b as f64 / 256.0);
        let p = q_mul(encode(x, 16).unwrap(), encode(y, 16).unwrap()).unwrap();
        prop_assert_eq!(decode(p), x * y);
    }
}

#[test]
fn roundtrip_bound_on_many_samples() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100_000 {
        let x = rng.gen_range(-1e9..1e9);
        assert!((decode(encode(x, 16).unwrap()) - x).abs() <= 2f64.powi(-17));
    }
}

#[test]
fn arithmetic_examples() {
    let q = |x: f64| encode(x, 16).unwrap();
    assert_eq!(q_mul(q(0.5), q(0.5)).unwrap(), q(0.25));
    assert!((decode(q_div(q(1.0), q(3.0)).unwrap()) - 1.0 / 3.0).abs() <= 2f64.powi(-16));
    assert_eq!(
        decode(QFixed::from_raw(1, fmt(16)).unwrap()),
        2f64.powi(-16)
    );
    assert_eq!(decode(QFixed::from_raw(-(1 << 16), fmt(16)).unwrap()), -1.0);
    let narrow = QFormat::new(16, 32).unwrap();
    assert_eq!(
        q_mul(
            encode_in(200.0, narrow).unwrap(),
            encode_in(200.0, narrow).unwrap()
        ),
        Err(FixedError::Overflow)
    );
    assert!(matches!(
        q_add(q(1.0), encode(1.0, 12).unwrap()),
        Err(FixedError::FormatMismatch(..))
    ));
}

#[test]
fn one_sweep_tracks_the_float_sweep() {
    let problem = PoissonProblem::manufactured_sine(8).unwrap();
    let mut float = problem.mesh();
    let values: Vec<f64> = (0..64)
        .map(|k| ((k * 37 % 64) as f64 / 64.0) - 0.5)
        .collect();
    float.set_interior(&values).unwrap();
    for omega in [0.5, 1.0, 1.5, 1.9] {
        let mut fixed = FixedMesh::from_mesh(&float, QFormat::default()).unwrap();
        let mut reference = float.clone();
        PoissonStencil::new(&problem, &reference)
            .unwrap()
            .sweep_lexicographic(&mut reference, omega)
            .unwrap();
        sweep_fixed(&mut fixed, &problem, encode(omega, 16).unwrap()).unwrap();
        let d = max_abs_diff(&fixed.to_mesh().interior(), &reference.interior());
        assert!(d <= 64.0 * 2f64.powi(-16), "omega {omega}: {d}");
    }
}

#[test]
fn zero_omega_leaves_mesh_unchanged() {
    let problem = PoissonProblem::manufactured_sine(6).unwrap();
    let mut mesh = problem.mesh();
    mesh.set_interior(&[0.25; 36]).unwrap();
    let mut fixed = FixedMesh::from_mesh(&mesh, QFormat::default()).unwrap();
    let before = fixed.clone();
    sweep_fixed(&mut fixed, &problem, encode(0.0, 16).unwrap()).unwrap();
    assert_eq!(fixed, before);
}

#[test]
fn coarse_tolerance_solve_matches_float() {
    let problem = PoissonProblem::manufactured_sine(16).unwrap();
    let float = solve_mesh(&problem, &SorParams::new(1.5).with_tol(1e-12)).unwrap();
    let params = SorParams::new(1.5).with_tol(1e-3);
    let a = solve_fixed(&problem, &params, QFormat::default(), &problem.mesh()).unwrap();
    let b = solve_fixed(&problem, &params, QFormat::default(), &problem.mesh()).unwrap();
    assert_eq!(a.termination, Termination::Converged);
    assert!(max_abs_diff(&a.final_iterate, &float.final_iterate) <= 1e-3);
    assert_eq!(a.iterations, b.iterations);
    assert_eq!(
        common::bits(&a.final_iterate),
        common::bits(&b.final_iterate)
    );
}

#[test]
fn agreement_shrinks_with_precision() {
    // long fixed-sweep runs settle on a point of the rounded map; its distance
    // from the float solution scales with the quantum
    let problem = PoissonProblem::manufactured_sine(16).unwrap();
    let float = solve_mesh(&problem, &SorParams::new(1.5).with_tol(1e-13)).unwrap();
    let params = SorParams::new(1.5).with_tol(1e-300).with_max_sweeps(400);
    let mut previous = f64::INFINITY;
    for f in [12, 16, 24] {
        let report = solve_fixed(&problem, &params, fmt(f), &problem.mesh()).unwrap();
        assert_eq!(report.termination, Termination::SweepCap);
        let d = max_abs_diff(&report.final_iterate, &float.final_iterate);
        assert!(d <= 16.0 * fmt(f).ulp(), "f {f}: {d}");
        assert!(d < previous);
        previous = d;
    }
}

#[test]
fn overflow_in_a_solve_is_divergence() {
    // four neighbours at 2^13 sum past the 2^15 range of a 32-bit word
    let problem = PoissonProblem::constant(4, 0.0, 2f64.powi(13)).unwrap();
    let narrow = QFormat::new(16, 32).unwrap();
    let report = solve_fixed(&problem, &SorParams::new(1.9), narrow, &problem.mesh());
    match report {
        Ok(r) => assert!(
            matches!(r.termination, Termination::Diverged { .. }),
            "{:?}",
            r.termination
        ),
        Err(e) => panic!("{e}"),
    }
}
