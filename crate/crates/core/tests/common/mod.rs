#![allow(dead_code)]

use hfvc::linalg::{Mat, Vector};
use hfvc::qp::QpProblem;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussian_mat<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vec<R: Rng>(rng: &mut R, len: usize) -> Vector {
    Vector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// Random strictly convex QP with at most 6 variables, 2 equalities and 8
/// inequalities. With `feasible` the constraints admit a known interior-ish
/// point; otherwise the right-hand sides are arbitrary.
pub fn random_qp<R: Rng>(rng: &mut R, feasible: bool) -> QpProblem {
    let n = rng.random_range(1..=6);
    let m = gaussian_mat(rng, n, n);
    let h = m.transpose() * &m + Mat::identity(n, n) * 0.1;
    let g = gaussian_vec(rng, n) * 3.0;
    let n_eq = rng.random_range(0..=2.min(n - 1));
    let n_in = rng.random_range(0..=8);
    let a_eq = gaussian_mat(rng, n_eq, n);
    let a_in = gaussian_mat(rng, n_in, n);
    let (b_eq, b_in) = if feasible {
        let x0 = gaussian_vec(rng, n);
        let slack = Vector::from_fn(n_in, |_, _| rng.random_range(0.0..1.0));
        (&a_eq * &x0, &a_in * &x0 + slack)
    } else {
        (gaussian_vec(rng, n_eq), gaussian_vec(rng, n_in))
    };
    QpProblem::new(h, g, a_eq, b_eq, a_in, b_in).expect("generated QP is valid")
}

/// Best feasible point over all active sets, each solved from its KKT
/// system. `None` when no candidate is feasible.
pub fn enumerate_qp(p: &QpProblem) -> Option<(Vector, f64)> {
    let n = p.num_vars();
    let m_in = p.a_in().nrows();
    let m_eq = p.a_eq().nrows();
    let feas_tol = 1e-9;
    let mut best: Option<(Vector, f64)> = None;
    for mask in 0u32..(1 << m_in) {
        let active: Vec<usize> = (0..m_in).filter(|i| mask & (1 << i) != 0).collect();
        let k = m_eq + active.len();
        if k > n {
            continue;
        }
        let mut kkt = Mat::zeros(n + k, n + k);
        let mut rhs = Vector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(p.h());
        rhs.rows_mut(0, n).copy_from(&(-p.g()));
        for r in 0..k {
            let (row, b) = if r < m_eq {
                (p.a_eq().row(r).into_owned(), p.b_eq()[r])
            } else {
                let i = active[r - m_eq];
                (p.a_in().row(i).into_owned(), p.b_in()[i])
            };
            kkt.view_mut((n + r, 0), (1, n)).copy_from(&row);
            kkt.view_mut((0, n + r), (n, 1)).copy_from(&row.transpose());
            rhs[n + r] = b;
        }
        let Some(sol) = kkt.full_piv_lu().solve(&rhs) else {
            continue;
        };
        let x = sol.rows(0, n).into_owned();
        let eq_ok = (p.a_eq() * &x - p.b_eq()).iter().all(|r| r.abs() <= feas_tol * (1.0 + x.amax()));
        let in_ok = (p.a_in() * &x - p.b_in()).iter().all(|&r| r <= feas_tol * (1.0 + x.amax()));
        if !(eq_ok && in_ok) {
            continue;
        }
        let f = p.objective(&x);
        if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((x, f));
        }
    }
    best
}

/// Condition number of `[[1, 0], [cos t, sin t]]` from the eigenvalues of
/// its 2x2 Gram matrix.
pub fn two_row_condition(theta: f64) -> f64 {
    let (c, s) = (theta.cos(), theta.sin());
    // Gram matrix [[1, c], [c, c^2 + s^2]].
    let (a, b, d) = (1.0, c, c * c + s * s);
    let half_tr = 0.5 * (a + d);
    let det = a * d - b * b;
    let disc = (half_tr * half_tr - det).max(0.0).sqrt();
    let (hi, lo) = (half_tr + disc, half_tr - disc);
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        (hi / lo).sqrt()
    }
}

pub fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}
