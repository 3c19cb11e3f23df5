//! Finite-difference oracle for the pair constraint rows.
//!
//! `h'' + l1 h' + l0 h` is measured by simulating both vehicles forward and
//! backward in time under constant inputs and differencing the barrier
//! along the trajectories. Its input gradient comes from central
//! differences of that measurement.

use mpf_core::barrier::{ellipse_h, pair_constraint_row, CbfGains, EllipseParams};
use mpf_core::dynamics::{rk4, ControlInput, VehicleParams, VehicleState};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Coarse time step of the stencils, s.
pub const STENCIL_DT: f64 = 5e-3;
/// Input step for the coefficient differences.
pub const INPUT_STEP: f64 = 1e-3;

fn h_along(
    si: &VehicleState,
    ui: &ControlInput,
    sj: &VehicleState,
    uj: &ControlInput,
    t: f64,
    e: &EllipseParams,
) -> f64 {
    if t == 0.0 {
        return ellipse_h(si, sj, e);
    }
    let p = VehicleParams::default();
    ellipse_h(&rk4(si, ui, &p, t), &rk4(sj, uj, &p, t), e)
}

/// `h'' + l1 h' + l0 h` at t = 0 from five-point stencils, with one
/// Richardson level over the step size.
pub fn composite(
    si: &VehicleState,
    ui: ControlInput,
    sj: &VehicleState,
    uj: ControlInput,
    e: &EllipseParams,
    g: &CbfGains,
) -> f64 {
    let stencil = |dt: f64| {
        let h = |k: f64| h_along(si, &ui, sj, &uj, k * dt, e);
        let (m2, m1, z, p1, p2) = (h(-2.0), h(-1.0), h(0.0), h(1.0), h(2.0));
        let d1 = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * dt);
        let d2 = (-p2 + 16.0 * p1 - 30.0 * z + 16.0 * m1 - m2) / (12.0 * dt * dt);
        d2 + g.l1 * d1 + g.l0 * z
    };
    (16.0 * stencil(STENCIL_DT / 2.0) - stencil(STENCIL_DT)) / 15.0
}

/// Oracle row `(a, [b_delta_i, b_ac_i, b_delta_j, b_ac_j])` around zero input.
pub fn fd_row(si: &VehicleState, sj: &VehicleState, e: &EllipseParams, g: &CbfGains) -> (f64, [f64; 4]) {
    let zero = ControlInput::ZERO;
    let a = composite(si, zero, sj, zero, e, g);
    let bumped = |c: usize, s: f64| {
        let mut u = [zero, zero];
        if c.is_multiple_of(2) {
            u[c / 2].delta = s;
        } else {
            u[c / 2].ac = s;
        }
        composite(si, u[0], sj, u[1], e, g)
    };
    let mut b = [0.0; 4];
    for (c, bc) in b.iter_mut().enumerate() {
        *bc = (bumped(c, INPUT_STEP) - bumped(c, -INPUT_STEP)) / (2.0 * INPUT_STEP);
    }
    (a, b)
}

/// Two vehicles on or near a two-lane road, at most 30 m apart and at
/// least 1 m from either focal point of the ego ellipse.
pub fn random_pair(rng: &mut ChaCha8Rng, e: &EllipseParams) -> (VehicleState, VehicleState) {
    loop {
        let si = VehicleState::new(
            rng.gen_range(-50.0..50.0),
            rng.gen_range(-1.0..5.0),
            rng.gen_range(-0.4..0.4),
            rng.gen_range(5.0..25.0),
        );
        let sj = VehicleState::new(
            si.x + rng.gen_range(-30.0..30.0),
            rng.gen_range(-1.0..5.0),
            rng.gen_range(-0.4..0.4),
            rng.gen_range(5.0..25.0),
        );
        let rho = e.rho();
        let phi = si.heading();
        let clear = [1.0, -1.0]
            .iter()
            .all(|s| (si.x + s * rho * phi[0] - sj.x).hypot(si.y + s * rho * phi[1] - sj.y) > 1.0);
        if clear {
            return (si, sj);
        }
    }
}

/// Relative error with a unit floor on the denominator.
pub fn rel_err(value: f64, reference: f64) -> f64 {
    (value - reference).abs() / reference.abs().max(1.0)
}

/// Worst relative error of [`pair_constraint_row`] against [`fd_row`] over
/// `count` random pairs, with the controller's inflated ellipse.
pub fn worst_row_error(seed: u64, count: usize) -> f64 {
    let e = EllipseParams::default().inflated();
    let g = CbfGains::default();
    let p = VehicleParams::default();
    let mut rng: ChaCha8Rng = rand::SeedableRng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let (si, sj) = random_pair(&mut rng, &e);
        let row = pair_constraint_row(0, &si, 1, &sj, &e, &g, &p);
        let (a, b) = fd_row(&si, &sj, &e, &g);
        let analytic = [
            row.coeffs[0].b_delta,
            row.coeffs[0].b_ac,
            row.coeffs[1].b_delta,
            row.coeffs[1].b_ac,
        ];
        worst = worst.max(rel_err(row.a, a));
        for (x, y) in analytic.iter().zip(&b) {
            worst = worst.max(rel_err(*x, *y));
        }
    }
    worst
}
