//! Dense linear-algebra contracts shared by the solver.
//!
//! Everything here is built on a single SVD routine. Bases are returned as
//! matrices whose *rows* are orthonormal; callers must not rely on the sign or
//! the in-span rotation of those rows.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("condition number of a zero matrix is undefined")]
    ZeroMatrix,
    #[error("linear system is inconsistent (residual norm {residual:.3e})")]
    Inconsistent { residual: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("SVD failed to converge")]
    NoConvergence,
}

/// Relative threshold used to decide numerical rank.
///
/// A singular value counts as nonzero when it exceeds `relative_tol * sigma_max`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RankTol(f64);

impl RankTol {
    pub const DEFAULT: f64 = 1e-9;

    pub fn new(relative_tol: f64) -> Result<Self, LinalgError> {
        if relative_tol.is_finite() && relative_tol > 0.0 {
            Ok(Self(relative_tol))
        } else {
            Err(LinalgError::Dimension(format!(
                "rank tolerance must be a positive finite number, got {relative_tol}"
            )))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    fn threshold(self, sigma_max: f64) -> f64 {
        self.0 * sigma_max
    }

    fn scaled_threshold(self, sigma_max: f64, scale: f64) -> f64 {
        self.0 * sigma_max.max(scale)
    }
}

impl Default for RankTol {
    fn default() -> Self {
        Self(Self::DEFAULT)
    }
}

/// Singular value decomposition with descending singular values.
///
/// `u` is `rows x k`, `v_t` is `k x cols`, with `k = min(rows, cols)`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Mat,
    pub singular_values: Vec<f64>,
    pub v_t: Mat,
}

impl Svd {
    pub fn rank(&self, tol: RankTol) -> usize {
        let Some(&smax) = self.singular_values.first() else {
            return 0;
        };
        if smax <= 0.0 {
            return 0;
        }
        let thr = tol.threshold(smax);
        self.singular_values.iter().filter(|&&s| s > thr).count()
    }
}

pub fn check_finite(a: &Mat) -> Result<(), LinalgError> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(LinalgError::NonFinite)
    }
}

/// One-sided Jacobi on the columns of a tall matrix (`rows >= cols`).
///
/// Returns `(u, sigma, v)` with `a = u * diag(sigma) * v^T`, `u` thin and
/// orthonormal, `v` square orthogonal, `sigma` unsorted.
fn jacobi_tall(a: &Mat) -> Result<(Mat, Vec<f64>, Mat), LinalgError> {
    let (m, n) = a.shape();
    let mut w = a.clone();
    let mut v = Mat::identity(n, n);
    let negligible = (f64::EPSILON * a.norm()).powi(2);
    let orth_tol = f64::EPSILON * m as f64;
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if alpha <= negligible || beta <= negligible || gamma.abs() <= orth_tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..m {
                    let (x, y) = (w[(r, p)], w[(r, q)]);
                    w[(r, p)] = c * x - s * y;
                    w[(r, q)] = s * x + c * y;
                }
                for r in 0..n {
                    let (x, y) = (v[(r, p)], v[(r, q)]);
                    v[(r, p)] = c * x - s * y;
                    v[(r, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence);
    }
    let sigma: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    let mut u = Mat::zeros(m, n);
    let mut filled = vec![false; n];
    for j in 0..n {
        if sigma[j] * sigma[j] > negligible && sigma[j] > 0.0 {
            u.set_column(j, &(w.column(j) / sigma[j]));
            filled[j] = true;
        }
    }
    // Columns for vanishing singular values only need to complete an
    // orthonormal set.
    for j in 0..n {
        if filled[j] {
            continue;
        }
        let mut best: Option<Vector> = None;
        for probe in 0..m {
            let mut cand = Vector::zeros(m);
            cand[probe] = 1.0;
            for _ in 0..2 {
                for k in 0..n {
                    if filled[k] {
                        let proj = u.column(k).dot(&cand);
                        cand -= u.column(k) * proj;
                    }
                }
            }
            if best.as_ref().is_none_or(|b| cand.norm() > b.norm()) {
                best = Some(cand);
            }
        }
        let cand = best.ok_or(LinalgError::NoConvergence)?;
        let norm = cand.norm();
        if norm < 1e-3 {
            return Err(LinalgError::NoConvergence);
        }
        u.set_column(j, &(cand / norm));
        filled[j] = true;
    }
    Ok((u, sigma, v))
}

/// Raw decomposition of a matrix with at least one row and one column.
fn decompose(a: &Mat) -> Result<(Mat, Vec<f64>, Mat), LinalgError> {
    let (m, n) = a.shape();
    let (u, sv, v_t) = if m >= n {
        let (u, s, v) = jacobi_tall(a)?;
        (u, s, v.transpose())
    } else {
        let (u, s, v) = jacobi_tall(&a.transpose())?;
        (v, s, u.transpose())
    };

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]).then(i.cmp(&j)));
    let u_sorted = Mat::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let vt_sorted = Mat::from_fn(order.len(), v_t.ncols(), |r, c| v_t[(order[r], c)]);
    let sv_sorted: Vec<f64> = order.iter().map(|&i| sv[i]).collect();

    let scaled = Mat::from_fn(u_sorted.nrows(), sv_sorted.len(), |r, c| u_sorted[(r, c)] * sv_sorted[c]);
    let err = (scaled * &vt_sorted - a).amax();
    if !(err <= 1e-10 * a.amax().max(f64::MIN_POSITIVE)) {
        return Err(LinalgError::NoConvergence);
    }
    Ok((u_sorted, sv_sorted, vt_sorted))
}

pub fn svd(a: &Mat) -> Result<Svd, LinalgError> {
    check_finite(a)?;
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        let k = m.min(n);
        return Ok(Svd {
            u: Mat::zeros(m, k),
            singular_values: Vec::new(),
            v_t: Mat::zeros(k, n),
        });
    }
    let (u, singular_values, v_t) = decompose(a)?;
    Ok(Svd {
        u,
        singular_values,
        v_t,
    })
}

/// Singular values padded to `cols` entries together with a complete
/// `cols x cols` orthogonal right factor.
fn full_right(a: &Mat) -> Result<(Vec<f64>, Mat), LinalgError> {
    check_finite(a)?;
    let (m, n) = a.shape();
    if n == 0 {
        return Ok((Vec::new(), Mat::zeros(0, 0)));
    }
    if m == 0 {
        return Ok((vec![0.0; n], Mat::identity(n, n)));
    }
    // Zero rows leave the right singular vectors unchanged but make the thin
    // factor square.
    let padded = if m < n {
        let mut p = Mat::zeros(n, n);
        p.view_mut((0, 0), (m, n)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let (_, sv, v_t) = decompose(&padded)?;
    Ok((sv, v_t))
}

fn rank_of(sv: &[f64], tol: RankTol, scale: f64) -> usize {
    match sv.first() {
        Some(&smax) if smax > 0.0 => {
            let thr = tol.scaled_threshold(smax, scale);
            sv.iter().filter(|&&s| s > thr).count()
        }
        _ => 0,
    }
}

pub fn rank(a: &Mat, tol: RankTol) -> Result<usize, LinalgError> {
    Ok(svd(a)?.rank(tol))
}

/// Rows form an orthonormal basis of the null space of `a`.
pub fn null_rows(a: &Mat, tol: RankTol) -> Result<Mat, LinalgError> {
    null_rows_scaled(a, tol, 0.0)
}

/// Like [`null_rows`], with singular values compared against
/// `tol * max(sigma_max, scale)`. A matrix whose entries are all far below
/// `scale` then has rank 0.
pub fn null_rows_scaled(a: &Mat, tol: RankTol, scale: f64) -> Result<Mat, LinalgError> {
    let (sv, v_t) = full_right(a)?;
    let n = a.ncols();
    let r = rank_of(&sv, tol, scale);
    Ok(v_t.rows(r, n - r).into_owned())
}

/// Rows form an orthonormal basis of the row space of `a`.
pub fn row_basis(a: &Mat, tol: RankTol) -> Result<Mat, LinalgError> {
    row_basis_scaled(a, tol, 0.0)
}

/// Like [`row_basis`] with the threshold of [`null_rows_scaled`].
pub fn row_basis_scaled(a: &Mat, tol: RankTol, scale: f64) -> Result<Mat, LinalgError> {
    let s = svd(a)?;
    let r = rank_of(&s.singular_values, tol, scale);
    Ok(s.v_t.rows(0, r).into_owned())
}

/// 2-norm condition number `sigma_max / sigma_min` over the `min(rows, cols)`
/// singular values. Returns `f64::INFINITY` when the smallest one falls below
/// the default rank tolerance.
pub fn cond2(a: &Mat) -> Result<f64, LinalgError> {
    let s = svd(a)?;
    let smax = s.singular_values.first().copied().unwrap_or(0.0);
    if smax <= 0.0 {
        return Err(LinalgError::ZeroMatrix);
    }
    let smin = *s.singular_values.last().unwrap();
    if smin <= RankTol::default().threshold(smax) {
        Ok(f64::INFINITY)
    } else {
        Ok(smax / smin)
    }
}

/// Minimum 2-norm solution of `a x = b`.
///
/// Fails with [`LinalgError::Inconsistent`] when the residual exceeds
/// `1e-8 * (1 + |b|)`.
pub fn min_norm_solve(a: &Mat, b: &Vector, tol: RankTol) -> Result<Vector, LinalgError> {
    if a.nrows() != b.len() {
        return Err(LinalgError::Dimension(format!(
            "matrix has {} rows but rhs has {} entries",
            a.nrows(),
            b.len()
        )));
    }
    if !b.iter().all(|x| x.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let s = svd(a)?;
    let r = s.rank(tol);
    let mut x = Vector::zeros(a.ncols());
    for i in 0..r {
        let coeff = s.u.column(i).dot(b) / s.singular_values[i];
        x += s.v_t.row(i).transpose() * coeff;
    }
    let residual = (a * &x - b).norm();
    if residual > 1e-8 * (1.0 + b.norm()) {
        return Err(LinalgError::Inconsistent { residual });
    }
    Ok(x)
}

/// Stack matrices vertically; all inputs must share a column count.
pub fn vstack(blocks: &[&Mat]) -> Mat {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r0 = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack: column mismatch");
        out.view_mut((r0, 0), b.shape()).copy_from(b);
        r0 += b.nrows();
    }
    out
}

/// Each row scaled to unit Euclidean norm. Zero rows are left as zero.
pub fn normalize_rows(a: &Mat) -> Mat {
    let mut out = a.clone();
    for mut row in out.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
    out
}

/// Largest absolute entry of `a a^T - I`.
pub fn orthonormality_defect(a: &Mat) -> f64 {
    let g = a * a.transpose();
    let mut worst: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// Orthonormalize the rows of `a` (which must be independent) by a QR
/// factorization of `a^T`.
pub fn orthonormalize_rows(a: &Mat) -> Mat {
    if a.nrows() == 0 {
        return a.clone();
    }
    let q = a.transpose().qr().q();
    let mut out = q.transpose();
    // Keep each row pointing the same way as the input row.
    for (i, mut row) in out.row_iter_mut().enumerate() {
        if row.dot(&a.row(i)) < 0.0 {
            row.neg_mut();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Mat {
        Mat::from_row_slice(rows, cols, data)
    }

    #[test]
    fn scaled_threshold_ignores_round_off() {
        let tiny = m(1, 2, &[2e-16, 1e-16]);
        let tol = RankTol::default();
        assert_eq!(null_rows(&tiny, tol).unwrap().nrows(), 1);
        assert_eq!(null_rows_scaled(&tiny, tol, 1.0).unwrap().nrows(), 2);
        assert_eq!(row_basis_scaled(&tiny, tol, 1.0).unwrap().nrows(), 0);
        assert_eq!(row_basis_scaled(&m(1, 2, &[0.0, 3.0]), tol, 1.0).unwrap().nrows(), 1);
    }

    #[test]
    fn svd_of_diagonal() {
        let s = svd(&m(2, 2, &[3.0, 0.0, 0.0, 1.0])).unwrap();
        assert_eq!(s.singular_values, vec![3.0, 1.0]);
    }

    #[test]
    fn svd_of_zero_matrix() {
        let s = svd(&Mat::zeros(2, 3)).unwrap();
        assert_eq!(s.singular_values, vec![0.0, 0.0]);
    }

    #[test]
    fn svd_golden_ratio_pair() {
        // A^T A = [[1,1],[1,2]] has eigenvalues (3 +- sqrt 5)/2.
        let s = svd(&m(2, 2, &[1.0, 1.0, 0.0, 1.0])).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((s.singular_values[0] - phi).abs() < 1e-12);
        assert!((s.singular_values[1] - (phi - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn svd_reconstructs() {
        let a = m(3, 2, &[1.0, 2.0, -3.0, 0.5, 4.0, 4.0]);
        let s = svd(&a).unwrap();
        let sigma = Mat::from_diagonal(&Vector::from_vec(s.singular_values.clone()));
        let back = &s.u * sigma * &s.v_t;
        assert!((back - &a).norm() < 1e-10 * a.norm());
    }

    #[test]
    fn svd_rejects_nan() {
        let a = m(1, 2, &[1.0, f64::NAN]);
        assert_eq!(svd(&a).unwrap_err(), LinalgError::NonFinite);
    }

    #[test]
    fn rank_examples() {
        let tol = RankTol::default();
        assert_eq!(rank(&Mat::identity(3, 3), tol).unwrap(), 3);
        assert_eq!(rank(&m(2, 2, &[1.0, 2.0, 2.0, 4.0]), tol).unwrap(), 1);
        assert_eq!(rank(&m(2, 2, &[1.0, 0.0, 0.0, 1e-14]), tol).unwrap(), 1);
        assert_eq!(rank(&Mat::zeros(2, 2), tol).unwrap(), 0);
    }

    #[test]
    fn rank_tol_must_be_positive() {
        assert!(RankTol::new(0.0).is_err());
        assert!(RankTol::new(-1.0).is_err());
        assert!(RankTol::new(f64::NAN).is_err());
        assert!(RankTol::new(1e-6).is_ok());
    }

    #[test]
    fn null_rows_examples() {
        let tol = RankTol::default();
        let n = null_rows(&m(1, 3, &[1.0, 0.0, 0.0]), tol).unwrap();
        assert_eq!(n.shape(), (2, 3));
        assert!(n.column(0).norm() < 1e-14);
        assert!(orthonormality_defect(&n) < 1e-12);

        let n = null_rows(&m(2, 2, &[2.0, 1.0, 1.0, 3.0]), tol).unwrap();
        assert_eq!(n.nrows(), 0);

        let n = null_rows(&m(1, 2, &[1.0, 1.0]), tol).unwrap();
        assert_eq!(n.nrows(), 1);
        let h = 1.0 / 2f64.sqrt();
        assert!((n[(0, 0)].abs() - h).abs() < 1e-12);
        assert!((n[(0, 0)] + n[(0, 1)]).abs() < 1e-12);
    }

    #[test]
    fn null_rows_of_empty_matrix_is_identity() {
        let n = null_rows(&Mat::zeros(0, 3), RankTol::default()).unwrap();
        assert_eq!(n, Mat::identity(3, 3));
    }

    #[test]
    fn row_basis_examples() {
        let tol = RankTol::default();
        let r = row_basis(&m(2, 2, &[2.0, 0.0, 4.0, 0.0]), tol).unwrap();
        assert_eq!(r.nrows(), 1);
        assert!((r[(0, 0)].abs() - 1.0).abs() < 1e-12);
        assert!(r[(0, 1)].abs() < 1e-12);

        let r = row_basis(&Mat::identity(3, 3), tol).unwrap();
        assert_eq!(r.nrows(), 3);
        assert!(orthonormality_defect(&r) < 1e-12);

        let r = row_basis(&Mat::zeros(2, 3), tol).unwrap();
        assert_eq!(r.shape(), (0, 3));
    }

    #[test]
    fn cond2_examples() {
        assert!((cond2(&Mat::identity(3, 3)).unwrap() - 1.0).abs() < 1e-12);
        assert!((cond2(&m(2, 2, &[3.0, 0.0, 0.0, 1.0])).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(cond2(&m(2, 2, &[1.0, 0.0, 1.0, 0.0])).unwrap(), f64::INFINITY);
        assert_eq!(cond2(&Mat::zeros(2, 2)).unwrap_err(), LinalgError::ZeroMatrix);
    }

    #[test]
    fn min_norm_solve_examples() {
        let tol = RankTol::default();
        let x = min_norm_solve(&m(1, 3, &[1.0, 0.0, 0.0]), &Vector::from_vec(vec![2.0]), tol)
            .unwrap();
        assert!((x - Vector::from_vec(vec![2.0, 0.0, 0.0])).norm() < 1e-12);

        let b = Vector::from_vec(vec![0.3, -7.0, 2.5]);
        let x = min_norm_solve(&Mat::identity(3, 3), &b, tol).unwrap();
        assert!((x - &b).norm() < 1e-12);

        let x = min_norm_solve(&m(1, 2, &[1.0, 1.0]), &Vector::from_vec(vec![2.0]), tol).unwrap();
        assert!((x - Vector::from_vec(vec![1.0, 1.0])).norm() < 1e-12);
    }

    #[test]
    fn min_norm_solve_reports_residual() {
        let a = m(2, 1, &[1.0, 1.0]);
        let b = Vector::from_vec(vec![1.0, -1.0]);
        match min_norm_solve(&a, &b, RankTol::default()) {
            Err(LinalgError::Inconsistent { residual }) => {
                assert!((residual - 2f64.sqrt()).abs() < 1e-12)
            }
            other => panic!("expected inconsistency, got {other:?}"),
        }
    }

    #[test]
    fn orthonormalize_keeps_span() {
        let a = m(2, 3, &[1.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let q = orthonormalize_rows(&a);
        assert!(orthonormality_defect(&q) < 1e-12);
        assert_eq!(rank(&vstack(&[&a, &q]), RankTol::default()).unwrap(), 2);
    }
}
