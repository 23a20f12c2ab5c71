//! Quasi-static system model: DOF partition, contact Jacobians, goal and
//! guard conditions.
//!
//! Generalized coordinates are ordered `[unactuated | actuated]`. Within each
//! group bodies keep their declaration order. Per body the coordinates are
//!
//! * planar rigid body: `[vx, vy, omega]`
//! * spatial rigid body: `[vx, vy, vz, wx, wy, wz]`, world-frame linear
//!   velocity of the body origin followed by world-frame angular velocity
//! * point body: world-frame linear velocity
//! * environment: none
//!
//! Contact normals point into `body_a`. The contact force `lambda` is the
//! force `body_b` exerts on `body_a`, in world Cartesian components for
//! sticking contacts and as a scalar normal magnitude for sliding ones.

pub mod scene;

use std::f64::consts::PI;

use log::warn;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Mat, RankTol, Vector};

pub use scene::{Scene, SceneError, SceneModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

impl ModelError {
    pub fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Invalid {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyKind {
    Planar,
    Spatial,
    Point,
    Environment,
}

impl BodyKind {
    pub fn dof(self, dim: usize) -> usize {
        match self {
            BodyKind::Planar => 3,
            BodyKind::Spatial => 6,
            BodyKind::Point => dim,
            BodyKind::Environment => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub name: String,
    pub kind: BodyKind,
    pub actuated: bool,
    /// Reference point of the body's velocity coordinates.
    pub origin: Vector,
}

/// Where a body's coordinates live in the generalized vector.
#[derive(Debug, Clone, PartialEq)]
pub struct BodySlot {
    pub body: Body,
    pub offset: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DofPartition {
    pub n_u: usize,
    pub n_a: usize,
}

impl DofPartition {
    pub fn new(n_u: usize, n_a: usize) -> Result<Self, ModelError> {
        if n_a == 0 {
            return Err(ModelError::invalid("/bodies", "at least one actuated DOF is required"));
        }
        Ok(Self { n_u, n_a })
    }

    pub fn n(&self) -> usize {
        self.n_u + self.n_a
    }
}

/// Lay out bodies as `[unactuated | actuated]`.
pub fn layout_bodies(dim: usize, bodies: &[Body]) -> Result<(DofPartition, Vec<BodySlot>), ModelError> {
    let mut slots: Vec<BodySlot> = bodies
        .iter()
        .map(|b| BodySlot {
            body: b.clone(),
            offset: None,
        })
        .collect();
    let mut next = 0;
    let mut n_u = 0;
    for pass_actuated in [false, true] {
        for slot in slots.iter_mut() {
            let dof = slot.body.kind.dof(dim);
            if dof == 0 || slot.body.actuated != pass_actuated {
                continue;
            }
            slot.offset = Some(next);
            next += dof;
            if !pass_actuated {
                n_u += dof;
            }
        }
    }
    let dof = DofPartition::new(n_u, next - n_u)?;
    Ok((dof, slots))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ContactMode {
    Sticking,
    /// Sliding with unit `direction`: the motion of `body_a` relative to
    /// `body_b`, tangent to the contact.
    Sliding { direction: Vector },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactPoint {
    pub position: Vector,
    pub normal: Vector,
    /// Columns are the local axes in world coordinates; the last column is
    /// the normal.
    pub frame: Mat,
    pub mode: ContactMode,
    pub mu: f64,
    pub body_a: usize,
    pub body_b: usize,
}

impl ContactPoint {
    /// `tangent_hint` fixes the first tangent axis in 3D (it is projected
    /// onto the tangent plane); without it an axis is picked from the normal.
    pub fn new(
        position: Vector,
        normal: Vector,
        tangent_hint: Option<Vector>,
        mode: ContactMode,
        mu: f64,
        pair: (usize, usize),
    ) -> Result<Self, ModelError> {
        let dim = position.len();
        if !(dim == 2 || dim == 3) || normal.len() != dim {
            return Err(ModelError::invalid("/normal", "position and normal must share dimension 2 or 3"));
        }
        if (normal.norm() - 1.0).abs() > 1e-12 {
            return Err(ModelError::invalid("/normal", "normal must have unit length"));
        }
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(ModelError::invalid("/mu", format!("friction coefficient must be >= 0, got {mu}")));
        }
        if let ContactMode::Sliding { direction } = &mode {
            if direction.len() != dim || (direction.norm() - 1.0).abs() > 1e-10 {
                return Err(ModelError::invalid("/slide_direction", "sliding direction must be a unit vector"));
            }
            if direction.dot(&normal).abs() > 1e-10 {
                return Err(ModelError::invalid("/slide_direction", "sliding direction must be tangent to the contact"));
            }
        }
        if pair.0 == pair.1 {
            return Err(ModelError::invalid("/pair", "a contact needs two distinct bodies"));
        }
        let frame = contact_frame(&normal, tangent_hint.as_ref())?;
        Ok(Self {
            position,
            normal,
            frame,
            mode,
            mu,
            body_a: pair.0,
            body_b: pair.1,
        })
    }

    pub fn dim(&self) -> usize {
        self.position.len()
    }

    pub fn is_sticking(&self) -> bool {
        matches!(self.mode, ContactMode::Sticking)
    }

    /// Number of force components this contact contributes to `lambda`.
    pub fn lambda_dim(&self) -> usize {
        if self.is_sticking() {
            self.dim()
        } else {
            1
        }
    }

    pub fn guard_spec(&self, lambda_offset: usize) -> GuardSpec {
        GuardSpec {
            lambda_offset,
            frame: self.frame.clone(),
            mu: self.mu,
            sticking: self.is_sticking(),
        }
    }
}

/// Orthonormal contact frame with the normal as its last column.
pub fn contact_frame(normal: &Vector, tangent_hint: Option<&Vector>) -> Result<Mat, ModelError> {
    match normal.len() {
        2 => Ok(Mat::from_column_slice(2, 2, &[normal[1], -normal[0], normal[0], normal[1]])),
        3 => {
            let n = Vector3::new(normal[0], normal[1], normal[2]);
            let seed = match tangent_hint {
                Some(h) if h.len() == 3 => Vector3::new(h[0], h[1], h[2]),
                Some(_) => return Err(ModelError::invalid("/tangent", "tangent hint must be 3D")),
                None => {
                    let a = n.abs();
                    if a.x <= a.y && a.x <= a.z {
                        Vector3::x()
                    } else if a.y <= a.z {
                        Vector3::y()
                    } else {
                        Vector3::z()
                    }
                }
            };
            let t1 = seed - n * seed.dot(&n);
            if t1.norm() < 1e-9 {
                return Err(ModelError::invalid("/tangent", "tangent hint is parallel to the normal"));
            }
            let t1 = t1.normalize();
            let t2 = n.cross(&t1);
            Ok(Mat::from_column_slice(
                3,
                3,
                &[t1.x, t1.y, t1.z, t2.x, t2.y, t2.z, n.x, n.y, n.z],
            ))
        }
        _ => Err(ModelError::invalid("/normal", "unsupported dimension")),
    }
}

/// `dim x n` map from generalized velocity to the world velocity of the
/// material point of `slot` located at `point`.
pub fn point_jacobian(dim: usize, n: usize, slot: &BodySlot, point: &Vector) -> Mat {
    let mut out = Mat::zeros(dim, n);
    let Some(o) = slot.offset else {
        return out;
    };
    let r = point - &slot.body.origin;
    match (slot.body.kind, dim) {
        (BodyKind::Planar, 2) => {
            out[(0, o)] = 1.0;
            out[(1, o + 1)] = 1.0;
            out[(0, o + 2)] = -r[1];
            out[(1, o + 2)] = r[0];
        }
        (BodyKind::Spatial, 3) => {
            for i in 0..3 {
                out[(i, o + i)] = 1.0;
            }
            // v + w x r = v - [r]x w
            out[(0, o + 4)] = r[2];
            out[(0, o + 5)] = -r[1];
            out[(1, o + 3)] = -r[2];
            out[(1, o + 5)] = r[0];
            out[(2, o + 3)] = r[1];
            out[(2, o + 4)] = -r[0];
        }
        (BodyKind::Point, d) => {
            for i in 0..d {
                out[(i, o + i)] = 1.0;
            }
        }
        (kind, d) => unreachable!("{kind:?} body in a {d}D scene"),
    }
    out
}

/// Velocity-constraint and force-transmission matrices for a contact set.
#[derive(Debug, Clone)]
pub struct ContactJacobians {
    /// Rows scaled to unit norm.
    pub j: Mat,
    pub jf: Mat,
    pub lambda_dim: usize,
    pub lambda_offsets: Vec<usize>,
}

pub fn assemble_jacobians(
    dim: usize,
    n: usize,
    slots: &[BodySlot],
    contacts: &[ContactPoint],
) -> Result<ContactJacobians, ModelError> {
    let mut j_rows: Vec<Vector> = Vec::new();
    let mut jf_rows: Vec<Vector> = Vec::new();
    let mut offsets = Vec::with_capacity(contacts.len());
    for (k, c) in contacts.iter().enumerate() {
        let path = format!("/contacts/{k}");
        let (a, b) = (
            slots.get(c.body_a).ok_or_else(|| ModelError::invalid(&path, "unknown body_a"))?,
            slots.get(c.body_b).ok_or_else(|| ModelError::invalid(&path, "unknown body_b"))?,
        );
        if a.offset.is_none() && b.offset.is_none() {
            return Err(ModelError::invalid(path, "contact between two environment bodies is vacuous"));
        }
        if c.dim() != dim {
            return Err(ModelError::invalid(path, "contact dimension differs from the scene"));
        }
        let rel = point_jacobian(dim, n, a, &c.position) - point_jacobian(dim, n, b, &c.position);
        offsets.push(jf_rows.len());
        match &c.mode {
            ContactMode::Sticking => {
                let local = c.frame.transpose() * &rel;
                for row in local.row_iter() {
                    j_rows.push(row.transpose());
                }
                for row in rel.row_iter() {
                    jf_rows.push(row.transpose());
                }
            }
            ContactMode::Sliding { direction } => {
                j_rows.push(rel.transpose() * &c.normal);
                let eff = &c.normal - direction * c.mu;
                jf_rows.push(rel.transpose() * eff);
            }
        }
    }
    let to_mat = |rows: &[Vector]| {
        let mut m = Mat::zeros(rows.len(), n);
        for (i, r) in rows.iter().enumerate() {
            m.set_row(i, &r.transpose());
        }
        m
    };
    let jf = to_mat(&jf_rows);
    let j = linalg::normalize_rows(&to_mat(&j_rows));
    Ok(ContactJacobians {
        lambda_dim: jf.nrows(),
        j,
        jf,
        lambda_offsets: offsets,
    })
}

/// Contact data the guard builder needs.
#[derive(Debug, Clone, PartialEq)]
pub struct GuardSpec {
    pub lambda_offset: usize,
    /// Local axes as columns, normal last. For a sticking contact the local
    /// force is `frame^T lambda`.
    pub frame: Mat,
    pub mu: f64,
    pub sticking: bool,
}

/// Affine guard `Lambda [lambda; f] <= b`.
#[derive(Debug, Clone, PartialEq)]
pub struct GuardConditions {
    pub lambda: Mat,
    pub b: Vector,
    pub n_min: f64,
}

impl GuardConditions {
    pub fn empty(cols: usize, n_min: f64) -> Self {
        Self {
            lambda: Mat::zeros(0, cols),
            b: Vector::zeros(0),
            n_min,
        }
    }

    /// Largest violation `max(Lambda z - b)` (negative when strictly satisfied).
    pub fn max_violation(&self, lambda_f: &Vector) -> f64 {
        (&self.lambda * lambda_f - &self.b)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Unit ridge directions `[sin(2 pi i/m), cos(2 pi i/m), 0]`, `i = 1..=m`.
pub fn ridge_directions(ridge_count: usize) -> Vec<Vector3<f64>> {
    (1..=ridge_count)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / ridge_count as f64;
            Vector3::new(a.sin(), a.cos(), 0.0)
        })
        .collect()
}

/// Friction-cone and normal-force rows for every contact.
///
/// `cols` is the width of `[lambda; f]`. Sticking 3D contacts get
/// `ridge_count` cone rows, sticking planar contacts get two, and every
/// contact gets a normal-force floor `n >= n_min`.
pub fn build_guards(
    specs: &[GuardSpec],
    cols: usize,
    n_min: f64,
    ridge_count: usize,
) -> Result<GuardConditions, ModelError> {
    if !n_min.is_finite() {
        return Err(ModelError::invalid("/guard/n_min", "n_min must be finite"));
    }
    let mut rows: Vec<(Vector, f64)> = Vec::new();
    let ridges = ridge_directions(ridge_count);
    for (k, s) in specs.iter().enumerate() {
        if !(s.mu >= 0.0) {
            return Err(ModelError::invalid(format!("/contacts/{k}/mu"), "friction coefficient must be >= 0"));
        }
        let o = s.lambda_offset;
        if !s.sticking {
            let mut r = Vector::zeros(cols);
            r[o] = -1.0;
            rows.push((r, -n_min));
            continue;
        }
        let d = s.frame.nrows();
        let normal = s.frame.column(d - 1).into_owned();
        let mut push_local = |local: &Vector, rhs: f64| {
            let world = &s.frame * local;
            let mut r = Vector::zeros(cols);
            r.rows_mut(o, d).copy_from(&world);
            rows.push((r, rhs));
        };
        match d {
            2 => {
                for sign in [1.0, -1.0] {
                    push_local(&Vector::from_vec(vec![sign, -s.mu]), 0.0);
                }
            }
            3 => {
                if ridge_count < 3 {
                    return Err(ModelError::invalid("/guard/ridge_count", "need at least 3 ridges in 3D"));
                }
                for di in &ridges {
                    push_local(&Vector::from_vec(vec![di.x, di.y, -s.mu]), 0.0);
                }
            }
            _ => return Err(ModelError::invalid(format!("/contacts/{k}"), "unsupported frame dimension")),
        }
        let mut r = Vector::zeros(cols);
        r.rows_mut(o, d).copy_from(&(-normal));
        rows.push((r, -n_min));
    }
    let mut lambda = Mat::zeros(rows.len(), cols);
    let mut b = Vector::zeros(rows.len());
    for (i, (r, rhs)) in rows.into_iter().enumerate() {
        lambda.set_row(i, &r.transpose());
        b[i] = rhs;
    }
    Ok(GuardConditions { lambda, b, n_min })
}

/// Goal `G v = b_G` with a redundancy flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Goal {
    pub g: Mat,
    pub b: Vector,
    pub redundant: bool,
}

/// True when some goal row is implied by the contacts or by other goal rows.
pub fn goal_is_redundant(j: &Mat, g: &Mat, tol: RankTol) -> Result<bool, ModelError> {
    if g.nrows() == 0 {
        return Ok(false);
    }
    let rj = linalg::rank(j, tol)?;
    let rjg = linalg::rank(&linalg::vstack(&[j, g]), tol)?;
    Ok(rjg < rj + g.nrows())
}

pub fn build_goal(j: &Mat, g: Mat, b: Vector, tol: RankTol) -> Result<Goal, ModelError> {
    if g.ncols() != j.ncols() {
        return Err(ModelError::invalid("/goal/rows", format!("goal rows must have {} entries", j.ncols())));
    }
    if g.nrows() != b.len() {
        return Err(ModelError::invalid("/goal/rhs", format!("expected {} entries, got {}", g.nrows(), b.len())));
    }
    if g.nrows() > j.ncols() {
        return Err(ModelError::invalid("/goal/rows", "more goal rows than degrees of freedom"));
    }
    linalg::check_finite(&g)?;
    let redundant = goal_is_redundant(j, &g, tol)?;
    if redundant {
        warn!("goal is redundant with the contact constraints");
    }
    Ok(Goal { g, b, redundant })
}

/// Everything the solver needs about one instant of a manipulation task.
#[derive(Debug, Clone)]
pub struct SystemModel {
    dof: DofPartition,
    j: Mat,
    jf: Mat,
    goal: Goal,
    external: Vector,
    guard: GuardConditions,
}

impl SystemModel {
    pub fn new(
        dof: DofPartition,
        j: Mat,
        jf: Mat,
        goal: Goal,
        external: Vector,
        guard: GuardConditions,
    ) -> Result<Self, ModelError> {
        let n = dof.n();
        if j.ncols() != n || jf.ncols() != n || goal.g.ncols() != n {
            return Err(ModelError::invalid("/model", format!("J, J' and G must all have {n} columns")));
        }
        if external.len() != n {
            return Err(ModelError::invalid("/external_force", format!("expected {n} entries, got {}", external.len())));
        }
        if guard.lambda.ncols() != jf.nrows() + n || guard.b.len() != guard.lambda.nrows() {
            return Err(ModelError::invalid("/guard", "guard matrix must span [lambda; f]"));
        }
        for m in [&j, &jf, &goal.g, &guard.lambda] {
            linalg::check_finite(m)?;
        }
        if !external.iter().chain(goal.b.iter()).chain(guard.b.iter()).all(|x| x.is_finite()) {
            return Err(ModelError::Linalg(LinalgError::NonFinite));
        }
        Ok(Self {
            dof,
            j,
            jf,
            goal,
            external,
            guard,
        })
    }

    pub fn dof(&self) -> DofPartition {
        self.dof
    }
    pub fn j(&self) -> &Mat {
        &self.j
    }
    pub fn jf(&self) -> &Mat {
        &self.jf
    }
    pub fn g(&self) -> &Mat {
        &self.goal.g
    }
    pub fn b_g(&self) -> &Vector {
        &self.goal.b
    }
    pub fn goal(&self) -> &Goal {
        &self.goal
    }
    pub fn external(&self) -> &Vector {
        &self.external
    }
    pub fn guard(&self) -> &GuardConditions {
        &self.guard
    }
    pub fn lambda_dim(&self) -> usize {
        self.jf.nrows()
    }

    /// Copy with a different goal, re-running the redundancy check.
    pub fn with_goal(&self, g: Mat, b: Vector, tol: RankTol) -> Result<Self, ModelError> {
        let goal = build_goal(&self.j, g, b, tol)?;
        Ok(Self {
            goal,
            ..self.clone()
        })
    }
}
