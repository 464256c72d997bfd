//! Oracles and generators shared by the integration tests.

#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sor_core::cycle::Stmt;
use sor_core::{CsrMatrix, SparseSystem};

/// Work left for one thread of the interpreter.
enum Frame {
    Run(Arc<Stmt>),
    /// Children of a `Seq` starting at `next`.
    Rest(Arc<Stmt>, usize),
    /// Remaining trips of a loop body.
    Again(Arc<Stmt>, u64),
}

struct Thread {
    stack: Vec<Frame>,
    parent: Option<usize>,
    /// Forked children still running; the thread sleeps while this is nonzero.
    pending: usize,
    done: bool,
}

/// Executes `root` one clock tick at a time. In every tick each awake thread
/// advances to its next assignment and performs it; a `par` forks one thread
/// per branch and its parent sleeps until the last branch finishes. Returns
/// the number of ticks in which at least one assignment ran.
pub fn simulate_cycles(root: &Stmt) -> u64 {
    let mut threads = vec![Thread {
        stack: vec![Frame::Run(Arc::new(root.clone()))],
        parent: None,
        pending: 0,
        done: false,
    }];
    let mut ticks = 0;
    loop {
        let mut worked = false;
        // threads woken or forked during the tick still get to run in it
        let mut ready: Vec<usize> = (0..threads.len())
            .filter(|&t| !threads[t].done && threads[t].pending == 0)
            .collect();
        while let Some(t) = ready.pop() {
            match advance(&mut threads, t) {
                Step::Assigned => worked = true,
                Step::Forked(children) => ready.extend(children),
                Step::Finished => {
                    if let Some(p) = threads[t].parent {
                        threads[p].pending -= 1;
                        if threads[p].pending == 0 {
                            ready.push(p);
                        }
                    }
                }
            }
        }
        if worked {
            ticks += 1;
        }
        if threads[0].done {
            return ticks;
        }
        assert!(worked, "interpreter stalled");
    }
}

enum Step {
    Assigned,
    Forked(Vec<usize>),
    Finished,
}

fn advance(threads: &mut Vec<Thread>, t: usize) -> Step {
    while let Some(frame) = threads[t].stack.pop() {
        match frame {
            Frame::Run(s) => match &*s {
                Stmt::Assign => return Step::Assigned,
                Stmt::Seq(_) => threads[t].stack.push(Frame::Rest(s.clone(), 0)),
                Stmt::Loop { trip_count, body } => threads[t]
                    .stack
                    .push(Frame::Again(body.clone(), *trip_count)),
                Stmt::Par(children) => {
                    if children.is_empty() {
                        continue;
                    }
                    let first = threads.len();
                    for c in children {
                        threads.push(Thread {
                            stack: vec![Frame::Run(c.clone())],
                            parent: Some(t),
                            pending: 0,
                            done: false,
                        });
                    }
                    threads[t].pending = children.len();
                    return Step::Forked((first..threads.len()).collect());
                }
            },
            Frame::Rest(s, next) => {
                let Stmt::Seq(children) = &*s else {
                    unreachable!()
                };
                if let Some(c) = children.get(next) {
                    let c = c.clone();
                    threads[t].stack.push(Frame::Rest(s.clone(), next + 1));
                    threads[t].stack.push(Frame::Run(c));
                }
            }
            Frame::Again(body, left) => {
                if left > 0 {
                    threads[t].stack.push(Frame::Again(body.clone(), left - 1));
                    threads[t].stack.push(Frame::Run(body));
                }
            }
        }
    }
    threads[t].done = true;
    Step::Finished
}

/// Random statement tree of depth at most `depth`, with at most three
/// children per block and trip counts up to three.
pub fn random_stmt(rng: &mut impl Rng, depth: usize) -> Stmt {
    if depth <= 1 {
        return Stmt::Assign;
    }
    match rng.gen_range(0..4) {
        0 => Stmt::Assign,
        1 => Stmt::seq((0..rng.gen_range(0..=3)).map(|_| random_stmt(rng, depth - 1))),
        2 => Stmt::par((0..rng.gen_range(0..=3)).map(|_| random_stmt(rng, depth - 1))),
        _ => Stmt::repeat(rng.gen_range(0..=3), random_stmt(rng, depth - 1)),
    }
}

pub fn stmt_strategy() -> impl Strategy<Value = Stmt> {
    (any::<u64>(), 1usize..=6)
        .prop_map(|(seed, depth)| random_stmt(&mut ChaCha8Rng::seed_from_u64(seed), depth))
}

/// `BᵀB + dim·I` with small integer entries in `B`, so the matrix is SPD and
/// every entry is an exactly representable integer.
pub fn integer_spd(rng: &mut impl Rng, dim: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-3i32..=3) as f64);
    b.transpose() * &b + DMatrix::identity(dim, dim) * dim as f64
}

/// Random SPD matrix with a sparse pattern and a random dense vector.
pub fn spd_case(seed: u64, max_dim: usize) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.gen_range(1..=max_dim);
    let mut a = integer_spd(&mut rng, dim);
    // knock out symmetric off-diagonal pairs; diagonal dominance keeps it SPD
    for i in 0..dim {
        for j in 0..i {
            if rng.gen_bool(0.4) {
                a[(i, j)] = 0.0;
                a[(j, i)] = 0.0;
            }
        }
        let off: f64 = (0..dim).filter(|&j| j != i).map(|j| a[(i, j)].abs()).sum();
        a[(i, i)] = a[(i, i)].max(off + 1.0);
    }
    let b = (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect();
    let x = (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect();
    (a, b, x)
}

pub fn system(a: &DMatrix<f64>, b: Vec<f64>) -> SparseSystem {
    SparseSystem::new(CsrMatrix::from_dense(a), b).expect("square system")
}

/// Dense LU solve of the assembled system.
pub fn direct_solve(system: &SparseSystem) -> Vec<f64> {
    let a = system.matrix().to_dense();
    let b = DVector::from_column_slice(system.rhs());
    a.lu()
        .solve(&b)
        .expect("nonsingular")
        .iter()
        .copied()
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Solves an SPD system whose nonzeros lie within `band` of the diagonal by
/// band Cholesky, `O(dim · band²)`.
pub fn band_cholesky_solve(system: &SparseSystem, band: usize) -> Vec<f64> {
    let n = system.dim();
    let w = band + 1;
    // l[i * w + (i - j)] holds L[i][j] for i - band <= j <= i
    let mut l = vec![0.0; n * w];
    let a = system.matrix();
    for i in 0..n {
        for j in i.saturating_sub(band)..=i {
            let mut s = a.get(i, j);
            for k in i.saturating_sub(band)..j {
                if j - k <= band {
                    s -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
            }
            l[i * w + (i - j)] = if i == j {
                assert!(s > 0.0, "not positive definite");
                s.sqrt()
            } else {
                s / l[j * w]
            };
        }
    }
    let mut y = system.rhs().to_vec();
    for i in 0..n {
        for k in i.saturating_sub(band)..i {
            y[i] -= l[i * w + (i - k)] * y[k];
        }
        y[i] /= l[i * w];
    }
    for i in (0..n).rev() {
        for k in i + 1..(i + band + 1).min(n) {
            y[i] -= l[k * w + (k - i)] * y[k];
        }
        y[i] /= l[i * w];
    }
    y
}
