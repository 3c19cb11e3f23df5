//! Solver for the softened safety-filter program
//!
//! ```text
//! minimize    sum_i q_i (u_i - u0_i)^2 + W * sum_k s_k^2
//! subject to  a_k + b_k . u + s_k >= 0,   s_k >= 0,   lo <= u <= hi
//! ```
//!
//! The optimal slack of each row is its violation, so the program is a
//! box-constrained, piecewise-quadratic minimization in `u` alone. Its
//! Hessian `2Q + 2W B_v^T B_v` (over the violated rows `B_v`) stays
//! positive definite even when rows are duplicated or dependent.

use serde::{Deserialize, Serialize};

use crate::error::QpError;

/// Sparse affine row `a + sum (index, coeff) . u + slack >= 0`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QpRow {
    pub a: f64,
    pub coeffs: Vec<(usize, f64)>,
}

impl QpRow {
    pub fn eval(&self, u: &[f64]) -> f64 {
        self.a + self.coeffs.iter().map(|&(i, b)| b * u[i]).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpProblem {
    pub u0: Vec<f64>,
    pub rows: Vec<QpRow>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub slack_weight: f64,
    /// Per-variable objective weights `q` in `sum q_i (u_i - u0_i)^2`;
    /// empty means all ones.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub weights: Vec<f64>,
}

impl QpProblem {
    pub fn n(&self) -> usize {
        self.u0.len()
    }

    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        self.weights.get(i).copied().unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.n();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(QpError::Malformed("bound vectors must match u0".into()));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l < u)) {
            return Err(QpError::Malformed("lower bound must be below upper bound".into()));
        }
        if !self.weights.is_empty() && (self.weights.len() != n || self.weights.iter().any(|q| !(*q > 0.0))) {
            return Err(QpError::Malformed(
                "weights must be empty or one positive value per variable".into(),
            ));
        }
        if !(self.slack_weight > 0.0) {
            return Err(QpError::Malformed("slack weight must be > 0".into()));
        }
        if self.rows.iter().flat_map(|r| &r.coeffs).any(|&(i, _)| i >= n) {
            return Err(QpError::Malformed("row coefficient index out of range".into()));
        }
        Ok(())
    }

    pub fn objective(&self, u: &[f64], slacks: &[f64]) -> f64 {
        let du: f64 = (0..self.n())
            .map(|i| self.weight(i) * (u[i] - self.u0[i]).powi(2))
            .sum();
        du + self.slack_weight * slacks.iter().map(|s| s * s).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u_star: Vec<f64>,
    pub slacks: Vec<f64>,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Row multipliers (zero for rows outside the final working set).
    pub multipliers: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub slack_weight: f64,
    /// Objective weight on steering deviations relative to acceleration
    /// deviations (rad vs m/s^2).
    pub steer_weight: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            slack_weight: 1e6,
            steer_weight: 30_000.0,
        }
    }
}

/// Active-set Newton with exact line search on the equivalent penalized form
/// `sum_i q_i (u_i - u0_i)^2 + W * sum_k max(0, -(a_k + b_k . u))^2` over the box. Its
/// minimizer solves the softened program with `s_k = max(0, -(a_k + b_k . u))`.
struct Newton<'p> {
    p: &'p QpProblem,
    u: Vec<f64>,
    c: Vec<f64>,
    g: Vec<f64>,
    pos: Vec<usize>,
    free: Vec<usize>,
    hess: Vec<f64>,
    merged: Vec<(usize, f64)>,
    /// Line-search kinks: (t, row value, row slope, +1 entering / -1 leaving).
    kinks: Vec<(f64, f64, f64, f64)>,
}
const FIXED: usize = usize::MAX;

impl<'p> Newton<'p> {
    fn new(p: &'p QpProblem) -> Self {
        let n = p.n();
        let u = (0..n).map(|i| p.u0[i].clamp(p.lower[i], p.upper[i])).collect();
        let mut st = Self {
            p,
            u,
            c: vec![0.0; p.rows.len()],
            g: vec![0.0; n],
            pos: vec![FIXED; n],
            free: Vec::with_capacity(n),
            hess: Vec::new(),
            merged: Vec::new(),
            kinks: Vec::new(),
        };
        st.refresh();
        st
    }

    fn f_at(&self, u: &[f64]) -> f64 {
        let p = self.p;
        let viol: f64 = p.rows.iter().map(|r| r.eval(u).min(0.0).powi(2)).sum();
        p.objective(u, &[]) + p.slack_weight * viol
    }

    fn objective(&self) -> f64 {
        self.f_at(&self.u)
    }

    /// Row values and gradient at the current point.
    fn refresh(&mut self) {
        let p = self.p;
        let w = p.slack_weight;
        for i in 0..p.n() {
            self.g[i] = 2.0 * p.weight(i) * (self.u[i] - p.u0[i]);
        }
        for (k, row) in p.rows.iter().enumerate() {
            let c = row.eval(&self.u);
            self.c[k] = c;
            if c < 0.0 {
                for &(i, b) in &row.coeffs {
                    self.g[i] += 2.0 * w * c * b;
                }
            }
        }
    }

    /// Diagonal of the Hessian of the penalized objective.
    fn curvature(&self) -> Vec<f64> {
        let p = self.p;
        let mut h: Vec<f64> = (0..p.n()).map(|i| 2.0 * p.weight(i)).collect();
        for (k, row) in p.rows.iter().enumerate() {
            if self.c[k] < 0.0 {
                for &(i, b) in &row.coeffs {
                    h[i] += 2.0 * p.slack_weight * b * b;
                }
            }
        }
        h
    }

    /// Size of a projected gradient step scaled by the diagonal curvature.
    fn stationarity(&self) -> f64 {
        let p = self.p;
        let h = self.curvature();
        (0..p.n())
            .map(|i| (self.u[i] - (self.u[i] - self.g[i] / h[i]).clamp(p.lower[i], p.upper[i])).abs())
            .fold(0.0, f64::max)
    }

    /// Newton direction on the inputs not held at a bound; zero elsewhere.
    /// An input sitting at a bound is held when the gradient or the
    /// direction itself points out of the box.
    fn direction(&mut self) -> Option<Vec<f64>> {
        let p = self.p;
        let n = p.n();
        for i in 0..n {
            let at_lo = self.u[i] <= p.lower[i] && self.g[i] >= 0.0;
            let at_hi = self.u[i] >= p.upper[i] && self.g[i] <= 0.0;
            self.pos[i] = if at_lo || at_hi { FIXED } else { 0 };
        }
        loop {
            let d = self.newton_on_free()?;
            let mut held = false;
            for i in 0..n {
                if self.pos[i] != FIXED
                    && ((d[i] < 0.0 && self.u[i] <= p.lower[i]) || (d[i] > 0.0 && self.u[i] >= p.upper[i]))
                {
                    self.pos[i] = FIXED;
                    held = true;
                }
            }
            if !held {
                return Some(d);
            }
        }
    }

    fn newton_on_free(&mut self) -> Option<Vec<f64>> {
        let p = self.p;
        let n = p.n();
        let w = p.slack_weight;
        self.free.clear();
        for i in 0..n {
            if self.pos[i] != FIXED {
                self.pos[i] = self.free.len();
                self.free.push(i);
            }
        }
        let nf = self.free.len();
        let mut d = vec![0.0; n];
        if nf == 0 {
            return Some(d);
        }
        self.hess.clear();
        self.hess.resize(nf * nf, 0.0);
        for (r, &i) in self.free.iter().enumerate() {
            self.hess[r * nf + r] = 2.0 * p.weight(i);
        }
        for (k, row) in p.rows.iter().enumerate() {
            if self.c[k] >= 0.0 {
                continue;
            }
            self.merged.clear();
            for &(i, b) in &row.coeffs {
                let q = self.pos[i];
                if q == FIXED {
                    continue;
                }
                match self.merged.iter_mut().find(|(j, _)| *j == q) {
                    Some(e) => e.1 += b,
                    None => self.merged.push((q, b)),
                }
            }
            for &(qi, bi) in &self.merged {
                for &(qj, bj) in &self.merged {
                    self.hess[qi * nf + qj] += 2.0 * w * bi * bj;
                }
            }
        }
        let mut rhs: Vec<f64> = self.free.iter().map(|&i| -self.g[i]).collect();
        if !cholesky_solve(&mut self.hess, &mut rhs, nf) {
            return None;
        }
        for (r, &i) in self.free.iter().enumerate() {
            d[i] = rhs[r];
        }
        Some(d)
    }

    /// Exact minimization along `d`, stopping early where a free input
    /// reaches its bound. Returns the largest input change and whether a
    /// bound cut the step short, or `None` when `d` is not a descent
    /// direction.
    fn step(&mut self, d: &[f64]) -> Option<(f64, bool)> {
        let p = self.p;
        let w = p.slack_weight;
        let mut t_max = f64::INFINITY;
        let mut blocking = None;
        for i in 0..p.n() {
            let room = if d[i] > 0.0 {
                (p.upper[i] - self.u[i]) / d[i]
            } else if d[i] < 0.0 {
                (p.lower[i] - self.u[i]) / d[i]
            } else {
                continue;
            };
            if room < t_max {
                t_max = room.max(0.0);
                blocking = Some(i);
            }
        }
        // phi'(t) = slope + curv * t on each piece between row kinks
        let mut slope = 0.0;
        let mut curv = 0.0;
        for i in 0..p.n() {
            slope += 2.0 * p.weight(i) * d[i] * (self.u[i] - p.u0[i]);
            curv += 2.0 * p.weight(i) * d[i] * d[i];
        }
        self.kinks.clear();
        for (k, row) in p.rows.iter().enumerate() {
            let beta: f64 = row.coeffs.iter().map(|&(i, b)| b * d[i]).sum();
            let c = self.c[k];
            if c < 0.0 || (c == 0.0 && beta < 0.0) {
                slope += 2.0 * w * beta * c;
                curv += 2.0 * w * beta * beta;
                if beta > 0.0 {
                    self.kinks.push((-c / beta, c, beta, -1.0));
                }
            } else if beta < 0.0 {
                self.kinks.push((-c / beta, c, beta, 1.0));
            }
        }
        if !(slope < 0.0) {
            return None;
        }
        self.kinks.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut t = t_max;
        let mut hit_bound = true;
        for &(at, c, beta, sign) in self
            .kinks
            .iter()
            .chain(std::iter::once(&(f64::INFINITY, 0.0, 0.0, 0.0)))
        {
            let end = at.min(t_max);
            if curv > 0.0 && slope + curv * end >= 0.0 {
                t = -slope / curv;
                hit_bound = false;
                break;
            }
            if at >= t_max {
                break;
            }
            slope += sign * 2.0 * w * beta * c;
            curv += sign * 2.0 * w * beta * beta;
        }
        let before = self.u.clone();
        for i in 0..p.n() {
            self.u[i] = (self.u[i] + t * d[i]).clamp(p.lower[i], p.upper[i]);
        }
        if hit_bound {
            if let Some(i) = blocking {
                self.u[i] = if d[i] > 0.0 { p.upper[i] } else { p.lower[i] };
            }
        }
        self.refresh();
        let moved = self
            .u
            .iter()
            .zip(&before)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        Some((moved, hit_bound))
    }

    fn finish(self, status: QpStatus, iterations: usize) -> QpSolution {
        let w = self.p.slack_weight;
        let kkt_residual = self.stationarity();
        let slacks: Vec<f64> = self.c.iter().map(|c| (-c).max(0.0)).collect();
        let multipliers = slacks.iter().map(|s| 2.0 * w * s).collect();
        QpSolution {
            u_star: self.u,
            slacks,
            status,
            kkt_residual,
            iterations,
            multipliers,
        }
    }
}

/// In-place Cholesky factorization and solve of a dense SPD system.
/// Returns false if a pivot is not positive.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / d;
        }
    }
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= a[i * n + k] * b[k];
        }
        b[i] = v / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in (i + 1)..n {
            v -= a[k * n + i] * b[k];
        }
        b[i] = v / a[i * n + i];
    }
    true
}

/// Solves the softened program. Iteration stops once a Newton step moves
/// the inputs by at most `tol`. If `max_iter` runs out the current
/// box-feasible iterate is returned with [`QpStatus::MaxIter`].
pub fn solve(p: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution, QpError> {
    solve_traced(p, tol, max_iter, None)
}

/// Like [`solve`], additionally recording the objective after every
/// iteration.
pub fn solve_traced(
    p: &QpProblem,
    tol: f64,
    max_iter: usize,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<QpSolution, QpError> {
    p.validate()?;
    let mut st = Newton::new(p);
    if let Some(t) = trace.as_deref_mut() {
        t.push(st.objective());
    }
    if st.stationarity() == 0.0 {
        return Ok(st.finish(QpStatus::Optimal, 0));
    }
    for iter in 0..max_iter {
        let Some(d) = st.direction() else {
            return Ok(st.finish(QpStatus::MaxIter, iter));
        };
        let moved = st.step(&d);
        if let Some(t) = trace.as_deref_mut() {
            t.push(st.objective());
        }
        match moved {
            Some((m, cut)) if m > tol || (cut && m > 0.0) => {}
            _ => return Ok(st.finish(QpStatus::Optimal, iter + 1)),
        }
    }
    Ok(st.finish(QpStatus::MaxIter, max_iter))
}

impl QpSettings {
    pub fn solve(&self, p: &QpProblem) -> Result<QpSolution, QpError> {
        solve(p, self.tol, self.max_iter)
    }
}

/// Closed-form minimizer of `|u - u0|^2` subject to the single unboxed
/// constraint `a + b . (u + w) >= 0`.
pub fn explicit_single_constraint(u0: &[f64], a: f64, b: &[f64], w: &[f64]) -> Result<Vec<f64>, QpError> {
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let value = a + dot(b, u0) + dot(b, w);
    if value >= 0.0 {
        return Ok(u0.to_vec());
    }
    let bb = dot(b, b);
    if bb == 0.0 {
        return Err(QpError::ZeroGradient);
    }
    Ok(u0.iter().zip(b).map(|(u, bi)| u - value / bb * bi).collect())
}
