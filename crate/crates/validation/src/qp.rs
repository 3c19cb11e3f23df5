//! Brute-force reference for the softened QP.
//!
//! The optimum of `sum q (u - u0)^2 + W sum s^2` under `a + b.u + s >= 0`,
//! `s >= 0` and the box lies on one piece: a set of rows that carry slack
//! and, for each input, whether it sits at its lower bound, its upper bound
//! or is free. Each piece is an unconstrained quadratic in the free inputs.
//! Enumerating all pieces and keeping the best self-consistent one gives the
//! exact optimum for small problems.

use mpf_core::qp::{solve, QpProblem, QpRow, QpStatus};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn dense_rows(p: &QpProblem) -> Vec<Vec<f64>> {
    p.rows
        .iter()
        .map(|r| {
            let mut b = vec![0.0; p.n()];
            for &(i, c) in &r.coeffs {
                b[i] += c;
            }
            b
        })
        .collect()
}

/// Objective of the program with the optimal slack for `u` substituted.
pub fn penalized_objective(p: &QpProblem, u: &[f64]) -> f64 {
    let dev: f64 = (0..p.n()).map(|i| p.weight(i) * (u[i] - p.u0[i]).powi(2)).sum();
    let pen: f64 = p.rows.iter().map(|r| r.eval(u).min(0.0).powi(2)).sum();
    dev + p.slack_weight * pen
}

/// Solves the piece given by `slack_set` (bit k set: row k carries slack)
/// and `status` (0 free, 1 lower, 2 upper per input).
fn solve_piece(p: &QpProblem, dense: &[Vec<f64>], slack_set: usize, status: &[u8]) -> Option<Vec<f64>> {
    let n = p.n();
    let mut u: Vec<f64> = (0..n)
        .map(|i| match status[i] {
            1 => p.lower[i],
            2 => p.upper[i],
            _ => 0.0,
        })
        .collect();
    let free: Vec<usize> = (0..n).filter(|&i| status[i] == 0).collect();
    if free.is_empty() {
        return Some(u);
    }
    let nf = free.len();
    let mut h = DMatrix::<f64>::zeros(nf, nf);
    let mut rhs = DVector::<f64>::zeros(nf);
    for (a, &i) in free.iter().enumerate() {
        h[(a, a)] += p.weight(i);
        rhs[a] += p.weight(i) * p.u0[i];
    }
    for (k, row) in p.rows.iter().enumerate() {
        if slack_set >> k & 1 == 0 {
            continue;
        }
        let fixed = row.a
            + (0..n)
                .filter(|&i| status[i] != 0)
                .map(|i| dense[k][i] * u[i])
                .sum::<f64>();
        for (a, &i) in free.iter().enumerate() {
            for (c, &j) in free.iter().enumerate() {
                h[(a, c)] += p.slack_weight * dense[k][i] * dense[k][j];
            }
            rhs[a] -= p.slack_weight * dense[k][i] * fixed;
        }
    }
    let x = h.cholesky()?.solve(&rhs);
    for (a, &i) in free.iter().enumerate() {
        u[i] = x[a];
    }
    Some(u)
}

/// Exact optimum by enumeration. Exponential in the problem size; meant for
/// `n <= 3` inputs and a handful of rows.
pub fn brute_force(p: &QpProblem) -> Vec<f64> {
    const TOL: f64 = 1e-9;
    let n = p.n();
    let m = p.rows.len();
    let dense = dense_rows(p);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut status = vec![0u8; n];
    for slack_set in 0..(1usize << m) {
        for code in 0..3usize.pow(n as u32) {
            for (i, s) in status.iter_mut().enumerate() {
                *s = (code / 3usize.pow(i as u32) % 3) as u8;
            }
            let Some(mut u) = solve_piece(p, &dense, slack_set, &status) else {
                continue;
            };
            let in_box = (0..n).all(|i| u[i] >= p.lower[i] - TOL && u[i] <= p.upper[i] + TOL);
            let consistent = p.rows.iter().enumerate().all(|(k, r)| {
                let v = r.eval(&u);
                if slack_set >> k & 1 == 1 {
                    v <= TOL
                } else {
                    v >= -TOL
                }
            });
            if !(in_box && consistent) {
                continue;
            }
            for i in 0..n {
                u[i] = u[i].clamp(p.lower[i], p.upper[i]);
            }
            let f = penalized_objective(p, &u);
            if best.as_ref().is_none_or(|(fb, _)| f < *fb) {
                best = Some((f, u));
            }
        }
    }
    best.expect("the optimal piece is always self-consistent").1
}

/// Random problem with 1 to 3 inputs, up to 3 dense rows, a box that
/// contains zero and (half the time) non-uniform weights.
pub fn random_problem(rng: &mut ChaCha8Rng) -> QpProblem {
    let n = rng.gen_range(1..=3);
    let m = rng.gen_range(0..=3);
    let u0 = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
    let lower = (0..n).map(|_| rng.gen_range(-5.0..-0.5)).collect();
    let upper = (0..n).map(|_| rng.gen_range(0.5..5.0)).collect();
    let rows = (0..m)
        .map(|_| QpRow {
            a: rng.gen_range(-6.0..3.0),
            coeffs: (0..n).map(|i| (i, rng.gen_range(-2.0..2.0))).collect(),
        })
        .collect();
    let weights = if rng.gen_bool(0.5) {
        (0..n).map(|_| rng.gen_range(0.2..5.0)).collect()
    } else {
        Vec::new()
    };
    QpProblem {
        u0,
        rows,
        lower,
        upper,
        slack_weight: 1e6,
        weights,
    }
}

/// Largest componentwise gap between the solver and [`brute_force`] over
/// `count` random problems, plus the number of non-optimal solver exits.
pub fn worst_brute_force_gap(seed: u64, count: usize) -> (f64, usize) {
    let mut rng = rand::SeedableRng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut not_optimal = 0;
    for _ in 0..count {
        let p = random_problem(&mut rng);
        let s = solve(&p, 1e-10, 500).expect("well-formed problem");
        if s.status != QpStatus::Optimal {
            not_optimal += 1;
        }
        let oracle = brute_force(&p);
        let gap = s
            .u_star
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(gap);
    }
    (worst, not_optimal)
}

/// Largest gap between the solver and the hard single-row projection
/// `u0 - min(0, a + b.u0) b / |b|^2` over `count` unboxed problems with
/// `|b| >= 1`.
pub fn worst_single_row_gap(seed: u64, count: usize) -> f64 {
    let mut rng: ChaCha8Rng = rand::SeedableRng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let n = rng.gen_range(1..=4);
        let u0: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let b: Vec<f64> = loop {
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            if b.iter().map(|x| x * x).sum::<f64>() >= 1.0 {
                break b;
            }
        };
        let a = rng.gen_range(-5.0..2.0);
        let p = QpProblem {
            u0: u0.clone(),
            rows: vec![QpRow {
                a,
                coeffs: b.iter().copied().enumerate().collect(),
            }],
            lower: vec![-1e3; n],
            upper: vec![1e3; n],
            slack_weight: 1e6,
            weights: Vec::new(),
        };
        let s = solve(&p, 1e-12, 200).expect("well-formed problem");
        let bb: f64 = b.iter().map(|x| x * x).sum();
        let v = (a + b.iter().zip(&u0).map(|(x, y)| x * y).sum::<f64>()).min(0.0);
        for i in 0..n {
            worst = worst.max((s.u_star[i] - (u0[i] - v * b[i] / bb)).abs());
        }
    }
    worst
}
