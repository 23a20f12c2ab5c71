//! Small dense convex QP solver.
//!
//! Solves
//!
//! ```text
//! minimize    1/2 x'Hx + g'x
//! subject to  A_eq x  = b_eq
//!             A_in x <= b_in
//! ```
//!
//! with the dual active-set method of Goldfarb and Idnani. Strictly convex
//! problems are solved directly; a merely semidefinite `H` is handled by an
//! outer proximal-point loop around the same routine. Each solution carries
//! the multipliers needed to audit its KKT residuals.

use std::time::{Duration, Instant};

use nalgebra::{Cholesky, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{Mat, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("cost matrix is not symmetric (max asymmetry {0:.3e})")]
    Asymmetric(f64),
    #[error("cost matrix is not positive semidefinite (min eigenvalue {0:.3e})")]
    Indefinite(f64),
    #[error("problem data contains non-finite entries")]
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    h: Mat,
    g: Vector,
    a_eq: Mat,
    b_eq: Vector,
    a_in: Mat,
    b_in: Vector,
    eig_min: f64,
    eig_max: f64,
}

impl QpProblem {
    pub fn new(
        h: Mat,
        g: Vector,
        a_eq: Mat,
        b_eq: Vector,
        a_in: Mat,
        b_in: Vector,
    ) -> Result<Self, QpError> {
        let n = h.nrows();
        let dim = |what: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(QpError::Dimension(format!("{what}: expected {want}, got {got}")))
            }
        };
        dim("H columns", h.ncols(), n)?;
        dim("g length", g.len(), n)?;
        dim("A_eq columns", a_eq.ncols(), n)?;
        dim("b_eq length", b_eq.len(), a_eq.nrows())?;
        dim("A_in columns", a_in.ncols(), n)?;
        dim("b_in length", b_in.len(), a_in.nrows())?;

        let finite = h.iter().chain(g.iter()).chain(a_eq.iter()).chain(b_eq.iter());
        if !finite.chain(a_in.iter()).chain(b_in.iter()).all(|x| x.is_finite()) {
            return Err(QpError::NonFinite);
        }
        let asym = (&h - h.transpose()).amax();
        if asym > 1e-10 {
            return Err(QpError::Asymmetric(asym));
        }
        let (eig_min, eig_max) = if n > 0 {
            let eig = SymmetricEigen::new(h.clone()).eigenvalues;
            (eig.min(), eig.max())
        } else {
            (0.0, 0.0)
        };
        if eig_min < -1e-10 * h.amax().max(1.0) {
            return Err(QpError::Indefinite(eig_min));
        }
        Ok(Self {
            h,
            g,
            a_eq,
            b_eq,
            a_in,
            b_in,
            eig_min,
            eig_max,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.h.nrows()
    }
    pub fn h(&self) -> &Mat {
        &self.h
    }
    pub fn g(&self) -> &Vector {
        &self.g
    }
    pub fn a_eq(&self) -> &Mat {
        &self.a_eq
    }
    pub fn b_eq(&self) -> &Vector {
        &self.b_eq
    }
    pub fn a_in(&self) -> &Mat {
        &self.a_in
    }
    pub fn b_in(&self) -> &Vector {
        &self.b_in
    }

    pub fn objective(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    /// Lagrangian `f(x) + nu'(A_eq x - b_eq) + mu'(A_in x - b_in)`.
    pub fn lagrangian(&self, x: &Vector, nu: &Vector, mu: &Vector) -> f64 {
        self.objective(x)
            + nu.dot(&(&self.a_eq * x - &self.b_eq))
            + mu.dot(&(&self.a_in * x - &self.b_in))
    }

    /// Same problem without inequality row `row`.
    pub fn without_inequality(&self, row: usize) -> Self {
        let a_in = self.a_in.clone().remove_row(row);
        let b_in = self.b_in.clone().remove_row(row);
        Self {
            a_in,
            b_in,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpLimits {
    pub max_iter: usize,
    pub max_time: Option<Duration>,
}

impl Default for QpLimits {
    fn default() -> Self {
        Self {
            max_iter: 200,
            max_time: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vector,
    pub eq_multipliers: Vector,
    pub in_multipliers: Vector,
    pub status: QpStatus,
    pub objective: f64,
    pub iterations: usize,
    /// Lower bound on the largest constraint violation of any point, set when
    /// the status is [`QpStatus::Infeasible`].
    pub infeasibility_bound: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktReport {
    pub eq_residual: f64,
    pub in_violation: f64,
    pub stationarity: f64,
    pub complementarity: f64,
    pub min_in_multiplier: f64,
}

impl KktReport {
    /// Tolerances an optimal solution is expected to meet.
    pub fn within(&self, tol: f64) -> bool {
        self.eq_residual <= tol
            && self.in_violation <= tol
            && self.stationarity <= tol
            && self.complementarity <= tol
            && self.min_in_multiplier >= -1e-8
    }
}

impl QpSolution {
    pub fn kkt(&self, p: &QpProblem) -> KktReport {
        let x = &self.x;
        let eq_residual = (p.a_eq() * x - p.b_eq()).amax();
        let slack = p.a_in() * x - p.b_in();
        let in_violation = slack.iter().fold(0.0f64, |m, &s| m.max(s));
        let grad = p.h() * x
            + p.g()
            + p.a_eq().transpose() * &self.eq_multipliers
            + p.a_in().transpose() * &self.in_multipliers;
        let complementarity = slack
            .iter()
            .zip(self.in_multipliers.iter())
            .fold(0.0f64, |m, (s, mu)| m.max((s * mu).abs()));
        let min_in_multiplier = self.in_multipliers.iter().copied().fold(0.0, f64::min);
        KktReport {
            eq_residual,
            in_violation,
            stationarity: grad.amax(),
            complementarity,
            min_in_multiplier,
        }
    }
}

pub fn qp_solve(p: &QpProblem, limits: QpLimits) -> QpSolution {
    let deadline = limits.max_time.map(|d| Instant::now() + d);
    let n = p.num_vars();
    let (lam_min, lam_max) = (p.eig_min, p.eig_max);
    if n == 0 || lam_min > 1e-8 * lam_max.max(1.0) {
        let chol = match Cholesky::new(p.h.clone()) {
            Some(c) => c,
            None => return proximal(p, limits, deadline, lam_max),
        };
        let raw = dual_active_set(&chol.l(), &p.g, p, limits.max_iter, deadline);
        return raw.finish(p);
    }
    proximal(p, limits, deadline, lam_max)
}

/// Proximal-point outer loop for semidefinite costs: each step solves the
/// strictly convex problem `f(x) + rho/2 |x - x_k|^2`.
fn proximal(p: &QpProblem, limits: QpLimits, deadline: Option<Instant>, lam_max: f64) -> QpSolution {
    let n = p.num_vars();
    let rho = 1e-2 * lam_max.max(1.0);
    let h_reg = &p.h + Mat::identity(n, n) * rho;
    let l = Cholesky::new(h_reg).expect("regularized cost is positive definite").l();
    let mut xk = Vector::zeros(n);
    let mut total_iter = 0;
    let mut last = None;
    for _ in 0..limits.max_iter.max(1) {
        let g_shift = &p.g - &xk * rho;
        let raw = dual_active_set(&l, &g_shift, p, limits.max_iter, deadline);
        total_iter += raw.iterations;
        if raw.status != QpStatus::Optimal {
            let mut sol = raw.finish(p);
            sol.iterations = total_iter;
            return sol;
        }
        let step = (&raw.x - &xk).amax();
        xk = raw.x.clone();
        let done = step <= 1e-11 * (1.0 + xk.amax());
        last = Some(raw);
        if done {
            let mut sol = last.take().unwrap().finish(p);
            sol.iterations = total_iter;
            return sol;
        }
        if deadline.is_some_and(|d| Instant::now() > d) {
            break;
        }
    }
    let mut sol = last.expect("at least one proximal step").finish(p);
    sol.status = QpStatus::MaxIter;
    sol.iterations = total_iter;
    sol
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    /// Equality row with the sign flip applied to bring it into `n'x >= b` form.
    Eq { row: usize, sign: f64 },
    In { row: usize },
}

struct Active {
    kind: Kind,
    normal: Vector,
    rhs: f64,
    mult: f64,
}

struct RawSolution {
    x: Vector,
    active: Vec<Active>,
    status: QpStatus,
    iterations: usize,
    infeasibility_bound: Option<f64>,
}

impl RawSolution {
    fn finish(self, p: &QpProblem) -> QpSolution {
        let mut eq = Vector::zeros(p.a_eq.nrows());
        let mut ineq = Vector::zeros(p.a_in.nrows());
        for a in &self.active {
            match a.kind {
                Kind::Eq { row, sign } => eq[row] = -sign * a.mult,
                Kind::In { row } => ineq[row] = a.mult,
            }
        }
        QpSolution {
            objective: p.objective(&self.x),
            x: self.x,
            eq_multipliers: eq,
            in_multipliers: ineq,
            status: self.status,
            iterations: self.iterations,
            infeasibility_bound: self.infeasibility_bound,
        }
    }
}

/// Step direction `z` (primal) and `r` (dual) for adding `normal` to the
/// active set, following Goldfarb-Idnani. `z` is `None` when the normal lies
/// in the span of the active normals.
fn step_direction(l: &Mat, active: &[Active], normal: &Vector) -> (Option<Vector>, Vector) {
    let n = l.nrows();
    let m = l.solve_lower_triangular(normal).expect("cholesky factor is nonsingular");
    let q = active.len();
    let (d, r) = if q == 0 {
        (m.clone(), Vector::zeros(0))
    } else {
        let mut nmat = Mat::zeros(n, q);
        for (j, a) in active.iter().enumerate() {
            nmat.set_column(j, &a.normal);
        }
        let b = l.solve_lower_triangular(&nmat).expect("cholesky factor is nonsingular");
        let qr = b.qr();
        let q1 = qr.q();
        let rr = qr.r();
        let proj = q1.transpose() * &m;
        let r = rr
            .solve_upper_triangular(&proj)
            .unwrap_or_else(|| Vector::zeros(q));
        (&m - &q1 * proj, r)
    };
    if d.norm() <= 1e-10 * m.norm().max(f64::MIN_POSITIVE) {
        (None, r)
    } else {
        let z = l.tr_solve_lower_triangular(&d).expect("cholesky factor is nonsingular");
        (Some(z), r)
    }
}

/// Certified lower bound on constraint violation when `normal = N r` with all
/// inequality components of `r` nonpositive.
fn infeasibility_bound(active: &[Active], r: &Vector, rhs: f64) -> f64 {
    let c = -rhs + active.iter().zip(r.iter()).map(|(a, rj)| rj * a.rhs).sum::<f64>();
    (-c).max(0.0) / (1.0 + r.iter().map(|v| v.abs()).sum::<f64>())
}

fn dual_active_set(
    l: &Mat,
    g: &Vector,
    p: &QpProblem,
    max_iter: usize,
    deadline: Option<Instant>,
) -> RawSolution {
    // Unconstrained minimizer -H^{-1} g.
    let y = l.solve_lower_triangular(g).expect("cholesky factor is nonsingular");
    let mut x = -l.tr_solve_lower_triangular(&y).expect("cholesky factor is nonsingular");
    let mut active: Vec<Active> = Vec::new();
    let infeasible = |x: Vector, active: Vec<Active>, bound: f64, iterations: usize| RawSolution {
        x,
        active,
        status: QpStatus::Infeasible,
        iterations,
        infeasibility_bound: Some(bound),
    };

    // Equalities are added first and never dropped.
    for row in 0..p.a_eq.nrows() {
        let a: Vector = p.a_eq.row(row).transpose();
        let b = p.b_eq[row];
        let s = a.dot(&x) - b;
        let sign = if s > 0.0 { -1.0 } else { 1.0 };
        let normal = &a * sign;
        let rhs = b * sign;
        let s = normal.dot(&x) - rhs;
        let (z, r) = step_direction(l, &active, &normal);
        match z {
            None => {
                let tol = 1e-9 * (1.0 + rhs.abs() + normal.norm() * x.amax());
                if s.abs() <= tol {
                    continue; // redundant but consistent
                }
                let bound = infeasibility_bound(&active, &r, rhs);
                return infeasible(x, active, bound, 0);
            }
            Some(z) => {
                let t = -s / z.dot(&normal);
                x += &z * t;
                for (a, rj) in active.iter_mut().zip(r.iter()) {
                    a.mult -= t * rj;
                }
                active.push(Active {
                    kind: Kind::Eq { row, sign },
                    normal,
                    rhs,
                    mult: t,
                });
            }
        }
    }

    let normals: Vec<(Vector, f64, f64)> = (0..p.a_in.nrows())
        .map(|i| {
            let nv: Vector = -p.a_in.row(i).transpose();
            let norm = nv.norm();
            (nv, -p.b_in[i], norm)
        })
        .collect();

    let mut iterations = 0;
    loop {
        // Most violated inequality, measured in normalized units.
        let scale = 1e-9 * (1.0 + x.amax());
        let mut pick: Option<(usize, f64)> = None;
        for (i, (nv, b, norm)) in normals.iter().enumerate() {
            if active.iter().any(|a| a.kind == Kind::In { row: i }) {
                continue;
            }
            let s = nv.dot(&x) - b;
            let viol = if *norm > 0.0 { -s / norm } else { -s };
            if viol > scale.max(1e-9 * b.abs()) && pick.is_none_or(|(_, v)| viol > v) {
                pick = Some((i, viol));
            }
        }
        let Some((pidx, _)) = pick else {
            return RawSolution {
                x,
                active,
                status: QpStatus::Optimal,
                iterations,
                infeasibility_bound: None,
            };
        };
        let (np, bp, _) = &normals[pidx];
        let mut u_p = 0.0;

        loop {
            if iterations >= max_iter || deadline.is_some_and(|d| Instant::now() > d) {
                return RawSolution {
                    x,
                    active,
                    status: QpStatus::MaxIter,
                    iterations,
                    infeasibility_bound: None,
                };
            }
            iterations += 1;
            let (z, r) = step_direction(l, &active, np);

            // Dual step limit over active inequalities.
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (j, (a, rj)) in active.iter().zip(r.iter()).enumerate() {
                if matches!(a.kind, Kind::In { .. }) && *rj > 1e-14 {
                    let t = a.mult / rj;
                    if t < t1 {
                        t1 = t;
                        drop_at = Some(j);
                    }
                }
            }
            let s_p = np.dot(&x) - bp;
            let t2 = match &z {
                Some(z) => {
                    let zn = z.dot(np);
                    if zn > 0.0 {
                        -s_p / zn
                    } else {
                        f64::INFINITY
                    }
                }
                None => f64::INFINITY,
            };

            if t1.is_infinite() && t2.is_infinite() {
                let bound = infeasibility_bound(&active, &r, *bp);
                return infeasible(x, active, bound, iterations);
            }

            let t = t1.min(t2);
            if let Some(z) = &z {
                if t2.is_finite() {
                    x += z * t;
                }
            }
            for (a, rj) in active.iter_mut().zip(r.iter()) {
                a.mult -= t * rj;
            }
            u_p += t;

            if t2 <= t1 {
                active.push(Active {
                    kind: Kind::In { row: pidx },
                    normal: np.clone(),
                    rhs: *bp,
                    mult: u_p,
                });
                break;
            }
            active.remove(drop_at.expect("finite dual step has a blocking constraint"));
        }
    }
}
