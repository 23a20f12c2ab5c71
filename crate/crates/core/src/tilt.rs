//! Block tilting: a cube pivots about one bottom edge on a table while a
//! point hand presses on its top face.
//!
//! The state is `q = [p_O; q_O; p_H]` (object position, scalar-first unit
//! quaternion, hand position) and the generalized velocity is
//! `v = [v_body; w_body; v_H]`. Quaternions use the Hamilton product with
//! `q_dot = 0.5 * q (x) (0, w_body)`.
//!
//! Contact forces are world-frame forces acting on the object, ordered hand,
//! table corner 1, table corner 2.

use log::debug;
use nalgebra::{Matrix3, Matrix3x4, Matrix4x3, Vector3, Vector4, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{Mat, RankTol, Vector};
use crate::model::{build_guards, goal_is_redundant, DofPartition, Goal, GuardSpec, ModelError, SystemModel};
use crate::ochs::{ochs_solve, HfvcSolution, SolveError, SolveOptions};

/// Scalar-first quaternion `[w, x, y, z]`.
pub type Quat = Vector4<f64>;

const UNIT_QUAT_TOL: f64 = 1e-9;
const CONTACT_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TiltError {
    #[error("{field}: {message}")]
    Invalid { field: &'static str, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("step {step}: {source}")]
    Step { step: usize, source: SolveError },
}

fn invalid(field: &'static str, message: impl Into<String>) -> TiltError {
    TiltError::Invalid {
        field,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TiltState {
    pub p_o: Vector3<f64>,
    pub q_o: Quat,
    pub p_h: Vector3<f64>,
}

impl TiltState {
    pub fn to_vector(&self) -> Vector {
        let mut q = Vector::zeros(10);
        q.rows_mut(0, 3).copy_from(&self.p_o);
        q.rows_mut(3, 4).copy_from(&self.q_o);
        q.rows_mut(7, 3).copy_from(&self.p_h);
        q
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_matrix(&self.q_o)
    }
}

/// Scenario parameters. Points are in metres, forces in newtons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TiltParams {
    /// Cube edge; the object frame sits at the cube centre, which starts at
    /// `(0, 0, edge / 2)` with world-aligned axes.
    pub edge: f64,
    /// Hand contact in the object frame.
    pub hand_contact: [f64; 3],
    /// Table contacts in the world frame; both must lie on the tilt axis.
    pub table_contacts: [[f64; 3]; 2],
    /// A point on the tilt axis.
    pub pivot: [f64; 3],
    /// Unit tilt axis in the world frame.
    pub axis: [f64; 3],
    /// Tilt rate in rad/s.
    pub rate: f64,
    /// Final tilt angle in rad, reached at the last step.
    pub final_angle: f64,
    pub mu_hand: f64,
    pub mu_table: f64,
    pub n_min: f64,
    /// Object weight, acting along world `-z` through the cube centre.
    pub object_weight: f64,
    /// External world-frame force on the hand; zero when the robot already
    /// compensates for its own weight.
    pub hand_force: [f64; 3],
    pub steps: usize,
    pub ridge_count: usize,
}

impl Default for TiltParams {
    fn default() -> Self {
        let h = 0.075 / 2.0;
        Self {
            edge: 0.075,
            hand_contact: [h / 2.0, 0.0, h],
            table_contacts: [[h, -h, 0.0], [h, h, 0.0]],
            pivot: [h, 0.0, 0.0],
            axis: [0.0, 1.0, 0.0],
            rate: 0.2,
            final_angle: std::f64::consts::FRAC_PI_4,
            mu_hand: 0.8,
            mu_table: 0.6,
            n_min: 0.5,
            object_weight: 3.0,
            hand_force: [0.0; 3],
            steps: 50,
            ridge_count: 8,
        }
    }
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn distance_to_line(x: &Vector3<f64>, point: &Vector3<f64>, unit_dir: &Vector3<f64>) -> f64 {
    let d = x - point;
    (d - unit_dir * unit_dir.dot(&d)).norm()
}

impl TiltParams {
    pub fn validate(&self) -> Result<(), TiltError> {
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        if !(self.edge.is_finite() && self.edge > 0.0) {
            return Err(invalid("edge", "must be a positive length"));
        }
        let axis = v3(self.axis);
        if !finite(&self.axis) || (axis.norm() - 1.0).abs() > 1e-6 {
            return Err(invalid("axis", format!("must be a unit vector, got norm {}", axis.norm())));
        }
        if !finite(&self.pivot) || !finite(&self.hand_contact) || !finite(&self.hand_force) {
            return Err(invalid("pivot", "points and forces must be finite"));
        }
        for (i, p) in self.table_contacts.iter().enumerate() {
            if !finite(p) || distance_to_line(&v3(*p), &v3(self.pivot), &axis) > CONTACT_TOL {
                return Err(invalid("table_contacts", format!("contact {i} is not on the tilt axis")));
            }
        }
        if !(self.rate.is_finite() && self.final_angle.is_finite()) {
            return Err(invalid("rate", "rate and final angle must be finite"));
        }
        if !(self.mu_hand >= 0.0 && self.mu_hand.is_finite()) {
            return Err(invalid("mu_hand", "must be a finite value >= 0"));
        }
        if !(self.mu_table >= 0.0 && self.mu_table.is_finite()) {
            return Err(invalid("mu_table", "must be a finite value >= 0"));
        }
        if !self.n_min.is_finite() {
            return Err(invalid("n_min", "must be finite"));
        }
        if !self.object_weight.is_finite() {
            return Err(invalid("object_weight", "must be finite"));
        }
        if self.steps == 0 {
            return Err(invalid("steps", "need at least one step"));
        }
        if self.ridge_count < 3 {
            return Err(invalid("ridge_count", "need at least 3 ridges"));
        }
        Ok(())
    }

    fn initial_center(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, self.edge / 2.0)
    }

    /// Table contacts expressed in the object frame.
    pub fn table_contacts_object(&self) -> [Vector3<f64>; 2] {
        let c = self.initial_center();
        self.table_contacts.map(|p| v3(p) - c)
    }

    /// Tilt angle at `step`, spread evenly from 0 to `final_angle`.
    pub fn angle_at(&self, step: usize) -> f64 {
        if self.steps <= 1 {
            0.0
        } else {
            self.final_angle * step as f64 / (self.steps - 1) as f64
        }
    }

    /// Exact state after rotating the initial configuration by `theta` about
    /// the tilt axis.
    pub fn state_at(&self, theta: f64) -> TiltState {
        let axis = v3(self.axis);
        let pivot = v3(self.pivot);
        let half = 0.5 * theta;
        let q = Quat::new(half.cos(), axis.x * half.sin(), axis.y * half.sin(), axis.z * half.sin());
        let r = rotation_matrix(&q);
        let c0 = self.initial_center();
        let h0 = c0 + v3(self.hand_contact);
        TiltState {
            p_o: pivot + r * (c0 - pivot),
            q_o: q,
            p_h: pivot + r * (h0 - pivot),
        }
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation matrix of a scalar-first quaternion (not renormalized).
pub fn rotation_matrix(q: &Quat) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        w * w + x * x - y * y - z * z,
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        w * w - x * x + y * y - z * z,
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        w * w - x * x - y * y + z * z,
    )
}

fn check_unit(q: &Quat) -> Result<(), TiltError> {
    if q.iter().all(|x| x.is_finite()) && (q.norm() - 1.0).abs() <= UNIT_QUAT_TOL {
        Ok(())
    } else {
        Err(invalid("q_o", format!("quaternion norm {} is not 1", q.norm())))
    }
}

/// `E(q)` with `q_dot = E(q) w_body`.
pub fn quat_rate_map(q: &Quat) -> Result<Matrix4x3<f64>, TiltError> {
    check_unit(q)?;
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Ok(Matrix4x3::new(-x, -y, -z, w, -z, y, z, w, -x, -y, x, w) * 0.5)
}

/// `d(R(q) p) / dq` for the homogeneous quadratic form of `R(q)`.
pub fn rotated_point_jacobian(q: &Quat, p: &Vector3<f64>) -> Matrix3x4<f64> {
    let w = q[0];
    let v = Vector3::new(q[1], q[2], q[3]);
    // R p = (w^2 - v.v) p + 2 (v.p) v + 2 w (v x p)
    let d_w = p * (2.0 * w) + v.cross(p) * 2.0;
    let d_v = p * v.transpose() * -2.0 + Matrix3::identity() * (2.0 * v.dot(p)) + v * p.transpose() * 2.0
        - skew(p) * (2.0 * w);
    let mut out = Matrix3x4::zeros();
    out.set_column(0, &d_w);
    out.fixed_view_mut::<3, 3>(0, 1).copy_from(&d_v);
    out
}

/// `Omega(q) = blockdiag(R, E(q), I)`, mapping `v` to `q_dot`.
pub fn velocity_map(state: &TiltState) -> Result<Mat, TiltError> {
    let e = quat_rate_map(&state.q_o)?;
    let mut omega = Mat::zeros(10, 9);
    omega.view_mut((0, 0), (3, 3)).copy_from(&state.rotation());
    omega.view_mut((3, 3), (4, 3)).copy_from(&e);
    omega.view_mut((7, 6), (3, 3)).copy_from(&Matrix3::identity());
    Ok(omega)
}

/// Residuals of the three point constraints (hand, corner 1, corner 2).
pub fn contact_residuals(params: &TiltParams, state: &TiltState) -> [Vector3<f64>; 3] {
    let r = state.rotation();
    let [t1, t2] = params.table_contacts_object();
    [
        r * v3(params.hand_contact) + state.p_o - state.p_h,
        r * t1 + state.p_o - v3(params.table_contacts[0]),
        r * t2 + state.p_o - v3(params.table_contacts[1]),
    ]
}

/// `d Phi / dq`, `9 x 10`.
pub fn holonomic_jacobian(params: &TiltParams, state: &TiltState) -> Mat {
    let [t1, t2] = params.table_contacts_object();
    let points = [v3(params.hand_contact), t1, t2];
    let mut j = Mat::zeros(9, 10);
    for (i, p) in points.iter().enumerate() {
        j.view_mut((3 * i, 0), (3, 3)).copy_from(&Matrix3::identity());
        j.view_mut((3 * i, 3), (3, 4)).copy_from(&rotated_point_jacobian(&state.q_o, p));
    }
    j.view_mut((0, 7), (3, 3)).copy_from(&(-Matrix3::identity()));
    j
}

/// Goal rows `G = [I_6 0]` and the object body twist that rotates it about
/// the tilt axis at the configured rate.
pub fn goal_body_twist(params: &TiltParams, state: &TiltState) -> (Mat, Vector) {
    let w = v3(params.axis) * params.rate;
    let v = -w.cross(&v3(params.pivot));
    let rt = state.rotation().transpose();
    // Ad of the inverse pose: [R^T, -R^T [p]x; 0, R^T].
    let body_v = rt * (v - state.p_o.cross(&w));
    let body_w = rt * w;
    let mut g = Mat::zeros(6, 9);
    g.view_mut((0, 0), (6, 6)).copy_from(&Mat::identity(6, 6));
    let b = Vector6::new(body_v.x, body_v.y, body_v.z, body_w.x, body_w.y, body_w.z);
    (g, Vector::from_column_slice(b.as_slice()))
}

pub fn tilt_model(params: &TiltParams, state: &TiltState, tol: RankTol) -> Result<SystemModel, TiltError> {
    params.validate()?;
    check_unit(&state.q_o)?;
    for (i, res) in contact_residuals(params, state).iter().enumerate() {
        if res.norm() > CONTACT_TOL {
            return Err(invalid(
                "state",
                format!("contact {i} is separated by {:.3e} m", res.norm()),
            ));
        }
    }
    let j = holonomic_jacobian(params, state) * velocity_map(state)?;
    let (g, b) = goal_body_twist(params, state);
    // A full object twist always repeats what the contacts already fix.
    let redundant = goal_is_redundant(&j, &g, tol)?;
    debug!("tilt goal redundant: {redundant}");
    let goal = Goal { g, b, redundant };

    let r = state.rotation();
    let gravity_body = r.transpose() * Vector3::new(0.0, 0.0, -params.object_weight);
    let mut external = Vector::zeros(9);
    external.rows_mut(0, 3).copy_from(&gravity_body);
    external.rows_mut(6, 3).copy_from(&v3(params.hand_force));

    // The hand pushes along the object's -z, so its local normal is -z_O.
    let flip = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
    let hand_frame = Mat::from_iterator(3, 3, (r * flip).iter().copied());
    let specs = [
        GuardSpec {
            lambda_offset: 0,
            frame: hand_frame,
            mu: params.mu_hand,
            sticking: true,
        },
        GuardSpec {
            lambda_offset: 3,
            frame: Mat::identity(3, 3),
            mu: params.mu_table,
            sticking: true,
        },
        GuardSpec {
            lambda_offset: 6,
            frame: Mat::identity(3, 3),
            mu: params.mu_table,
            sticking: true,
        },
    ];
    let guard = build_guards(&specs, 18, params.n_min, params.ridge_count)?;
    Ok(SystemModel::new(DofPartition::new(6, 3)?, j.clone(), j, goal, external, guard)?)
}

#[derive(Debug, Clone)]
pub struct TiltStep {
    pub step: usize,
    pub theta: f64,
    pub state: TiltState,
    pub solution: HfvcSolution,
}

impl TiltStep {
    /// `|y| / |cmd|` of the world-frame force command, 0 for a zero command.
    pub fn force_y_fraction(&self) -> f64 {
        let cmd = self.solution.force_command();
        let norm = cmd.norm();
        if norm == 0.0 {
            0.0
        } else {
            cmd[1].abs() / norm
        }
    }
}

/// Solves every step of the tilt; stops at the first failing step.
pub fn run_tilt(params: &TiltParams, opts: &SolveOptions) -> Result<Vec<TiltStep>, TiltError> {
    params.validate()?;
    let mut out = Vec::with_capacity(params.steps);
    for step in 0..params.steps {
        let theta = params.angle_at(step);
        let state = params.state_at(theta);
        let model = tilt_model(params, &state, opts.rank_tol)?;
        let solution = ochs_solve(&model, opts).map_err(|source| TiltError::Step { step, source })?;
        out.push(TiltStep {
            step,
            theta,
            state,
            solution,
        });
    }
    Ok(out)
}

pub const TILT_CSV_COLUMNS: [&str; 8] = [
    "step",
    "theta",
    "status",
    "n_av",
    "crashing_index",
    "w_av",
    "eta_af",
    "force_y_fraction",
];

fn join(v: &Vector) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

/// Per-step CSV; vector columns are `;`-separated.
pub fn tilt_csv(steps: &[TiltStep]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TILT_CSV_COLUMNS).expect("in-memory write");
    for s in steps {
        let index = if s.solution.crashing_index.is_finite() {
            s.solution.crashing_index.to_string()
        } else {
            "inf".to_string()
        };
        w.write_record([
            s.step.to_string(),
            s.theta.to_string(),
            "solved".to_string(),
            s.solution.n_av.to_string(),
            index,
            join(&s.solution.w_av),
            join(&s.solution.eta_af),
            s.force_y_fraction().to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}
