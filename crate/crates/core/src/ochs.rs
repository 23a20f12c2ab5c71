//! Optimally conditioned hybrid servoing: velocity-control axes, their
//! completion to a full actuated frame, velocity magnitudes and the
//! force-magnitude QP.

use std::time::Instant;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Mat, RankTol, Vector};
use crate::model::{DofPartition, SystemModel};
use crate::qp::{qp_solve, KktReport, QpError, QpLimits, QpProblem, QpStatus};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityDimMode {
    /// Fewest velocity-controlled directions that reach the goal.
    #[default]
    Minimal,
    /// Velocity control in every free robot direction.
    Maximal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub mode: VelocityDimMode,
    pub rank_tol: RankTol,
    pub ill_conditioned_threshold: f64,
    pub qp_limits: QpLimits,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            mode: VelocityDimMode::Minimal,
            rank_tol: RankTol::default(),
            ill_conditioned_threshold: 100.0,
            qp_limits: QpLimits::default(),
        }
    }
}

impl SolveOptions {
    pub fn with_mode(mode: VelocityDimMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        if !(self.ill_conditioned_threshold > 1.0) {
            return Err(SolveError::InvalidOptions(format!(
                "ill_conditioned_threshold must exceed 1, got {}",
                self.ill_conditioned_threshold
            )));
        }
        Ok(())
    }
}

/// Which goal test rejected the problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InfeasibleReason {
    #[serde(rename = "necessary_condition")]
    NecessaryCondition,
    #[serde(rename = "rank_condition")]
    RankCondition,
    #[serde(rename = "K_deficient")]
    KDeficient,
    #[serde(rename = "no_special_solution")]
    NoSpecialSolution,
}

impl InfeasibleReason {
    pub fn as_str(self) -> &'static str {
        match self {
            InfeasibleReason::NecessaryCondition => "necessary_condition",
            InfeasibleReason::RankCondition => "rank_condition",
            InfeasibleReason::KDeficient => "K_deficient",
            InfeasibleReason::NoSpecialSolution => "no_special_solution",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Velocity,
    Force,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("infeasible goal ({}): {detail}", reason.as_str())]
    InfeasibleGoal { reason: InfeasibleReason, detail: String },
    #[error("guard conditions cannot be satisfied (violation lower bound {bound:.3e})")]
    GuardInfeasible { bound: f64 },
    #[error("force QP hit its iteration cap after {iterations} iterations")]
    QpIterationCap { iterations: usize },
    #[error("{stage:?} stage: {source}")]
    Numerical { stage: Stage, source: LinalgError },
    #[error("force QP rejected: {0}")]
    Qp(#[from] QpError),
    #[error("invalid options: {0}")]
    InvalidOptions(String),
}

impl SolveError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            SolveError::InfeasibleGoal { .. } => Some(Stage::Velocity),
            SolveError::GuardInfeasible { .. } | SolveError::QpIterationCap { .. } | SolveError::Qp(_) => {
                Some(Stage::Force)
            }
            SolveError::Numerical { stage, .. } => Some(*stage),
            SolveError::InvalidOptions(_) => None,
        }
    }

    /// The problem itself has no solution, as opposed to a numerical or
    /// input failure.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, SolveError::InfeasibleGoal { .. } | SolveError::GuardInfeasible { .. })
    }

    /// Short machine-readable label.
    pub fn label(&self) -> &'static str {
        match self {
            SolveError::InfeasibleGoal { reason, .. } => reason.as_str(),
            SolveError::GuardInfeasible { .. } => "guard_infeasible",
            SolveError::QpIterationCap { .. } => "qp_max_iter",
            SolveError::Numerical { .. } => "numerical",
            SolveError::Qp(_) => "qp_invalid",
            SolveError::InvalidOptions(_) => "invalid_options",
        }
    }
}

fn num(stage: Stage) -> impl Fn(LinalgError) -> SolveError {
    move |source| SolveError::Numerical { stage, source }
}

/// Condition number of `[row_basis(J); normalize_rows(C)]`.
pub fn crashing_index(j: &Mat, c: &Mat, tol: RankTol) -> Result<f64, LinalgError> {
    if c.nrows() == 0 {
        return Err(LinalgError::Dimension("crashing index needs at least one control row".into()));
    }
    if c.ncols() != j.ncols() {
        return Err(LinalgError::Dimension(format!(
            "J has {} columns but C has {}",
            j.ncols(),
            c.ncols()
        )));
    }
    let stacked = linalg::vstack(&[&linalg::row_basis(j, tol)?, &linalg::normalize_rows(c)]);
    if stacked.nrows() > stacked.ncols() {
        return Ok(f64::INFINITY);
    }
    linalg::cond2(&stacked)
}

/// Orthonormal rows spanning the robot motions allowed by `J v = 0`, with
/// unactuated entries zero.
pub fn free_robot_motions(j: &Mat, dof: DofPartition, tol: RankTol) -> Result<Mat, LinalgError> {
    let u = if j.nrows() == 0 {
        Mat::identity(dof.n(), dof.n())
    } else {
        linalg::null_rows(j, tol)?
    };
    let actuated = linalg::row_basis_scaled(&u.columns(dof.n_u, dof.n_a).into_owned(), tol, 1.0)?;
    let mut basis = Mat::zeros(actuated.nrows(), dof.n());
    basis.columns_mut(dof.n_u, dof.n_a).copy_from(&actuated);
    Ok(basis)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityControl {
    pub n_av: usize,
    /// `n_av x n`, orthonormal rows, zero unactuated columns.
    pub c: Mat,
    pub w_av: Vector,
    pub free_motions: Mat,
    /// Minimum-norm velocity meeting both contacts and goal.
    pub v_star: Vector,
}

pub fn solve_velocity(model: &SystemModel, opts: &SolveOptions) -> Result<VelocityControl, SolveError> {
    let tol = opts.rank_tol;
    let e = num(Stage::Velocity);
    let (j, g) = (model.j(), model.g());
    let dof = model.dof();
    let n = dof.n();
    let jg = linalg::vstack(&[j, g]);
    let rank_j = linalg::rank(j, tol).map_err(&e)?;
    let rank_jg = linalg::rank(&jg, tol).map_err(&e)?;
    let needed = rank_jg.saturating_sub(rank_j);

    let u_bar = free_robot_motions(j, dof, tol).map_err(&e)?;
    if u_bar.nrows() < needed {
        return Err(SolveError::InfeasibleGoal {
            reason: InfeasibleReason::NecessaryCondition,
            detail: format!("goal needs {needed} velocity directions, robot has {} free", u_bar.nrows()),
        });
    }

    // Fewer control rows only make the rank condition harder to meet, so a
    // goal outside ROW([J; U]) is out of reach in every mode.
    let rank_ju = linalg::rank(&linalg::vstack(&[j, &u_bar]), tol).map_err(&e)?;
    let rank_jug = linalg::rank(&linalg::vstack(&[j, &u_bar, g]), tol).map_err(&e)?;
    if rank_ju != rank_jug {
        return Err(SolveError::InfeasibleGoal {
            reason: InfeasibleReason::RankCondition,
            detail: format!("rank [J;U] = {rank_ju} but rank [J;U;G] = {rank_jug}"),
        });
    }

    let c = match opts.mode {
        VelocityDimMode::Maximal => u_bar.clone(),
        VelocityDimMode::Minimal if needed == 0 => Mat::zeros(0, n),
        VelocityDimMode::Minimal => {
            let null_jg = linalg::null_rows(&jg, tol).map_err(&e)?;
            let k = if null_jg.nrows() == 0 {
                Mat::identity(u_bar.nrows(), u_bar.nrows())
            } else {
                linalg::null_rows_scaled(&(null_jg * u_bar.transpose()), tol, 1.0).map_err(&e)?
            };
            if k.nrows() < needed {
                return Err(SolveError::InfeasibleGoal {
                    reason: InfeasibleReason::KDeficient,
                    detail: format!("only {} admissible directions for {needed} required", k.nrows()),
                });
            }
            k.rows(0, needed) * &u_bar
        }
    };

    let jc = linalg::vstack(&[j, &c]);
    let rank_jc = linalg::rank(&jc, tol).map_err(&e)?;
    let rank_jcg = linalg::rank(&linalg::vstack(&[&jc, g]), tol).map_err(&e)?;
    if rank_jc != rank_jcg {
        return Err(SolveError::InfeasibleGoal {
            reason: InfeasibleReason::RankCondition,
            detail: format!("rank [J;C] = {rank_jc} but rank [J;C;G] = {rank_jcg}"),
        });
    }

    let mut rhs = Vector::zeros(jg.nrows());
    rhs.rows_mut(j.nrows(), g.nrows()).copy_from(model.b_g());
    let v_star = match linalg::min_norm_solve(&jg, &rhs, tol) {
        Ok(v) => v,
        Err(LinalgError::Inconsistent { residual }) => {
            return Err(SolveError::InfeasibleGoal {
                reason: InfeasibleReason::NoSpecialSolution,
                detail: format!("goal and contacts are inconsistent (residual {residual:.3e})"),
            })
        }
        Err(other) => return Err(e(other)),
    };
    let w_av = &c * &v_star;
    Ok(VelocityControl {
        n_av: c.nrows(),
        c,
        w_av,
        free_motions: u_bar,
        v_star,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlAxes {
    pub n_af: usize,
    /// Force-controlled rows first, then the actuated part of `C`.
    pub r_a: Mat,
    pub t: Mat,
}

pub fn complete_axes(c: &Mat, dof: DofPartition, tol: RankTol) -> Result<ControlAxes, LinalgError> {
    let (n_u, n_a) = (dof.n_u, dof.n_a);
    if c.nrows() > n_a || c.ncols() != dof.n() {
        return Err(LinalgError::Dimension(format!(
            "C is {}x{} for {n_u}+{n_a} DOF",
            c.nrows(),
            c.ncols()
        )));
    }
    let r_c = c.columns(n_u, n_a).into_owned();
    let r_a = if r_c.nrows() == 0 {
        Mat::identity(n_a, n_a)
    } else {
        linalg::vstack(&[&linalg::null_rows(&r_c, tol)?, &r_c])
    };
    if r_a.nrows() != n_a {
        return Err(LinalgError::Dimension("velocity-control rows are not independent".into()));
    }
    let mut t = Mat::identity(dof.n(), dof.n());
    t.view_mut((n_u, n_u), (n_a, n_a)).copy_from(&r_a);
    Ok(ControlAxes {
        n_af: n_a - c.nrows(),
        r_a,
        t,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForceControl {
    pub lambda: Vector,
    /// Actuation force magnitudes in the `R_a` frame.
    pub eta_a: Vector,
    pub eta_af: Vector,
    pub kkt: KktReport,
    pub iterations: usize,
}

/// Minimum-norm contact and actuation forces that balance the system and
/// keep every guard row satisfied.
pub fn solve_force(model: &SystemModel, axes: &ControlAxes, limits: QpLimits) -> Result<ForceControl, SolveError> {
    let dof = model.dof();
    let (n, n_u, n_a) = (dof.n(), dof.n_u, dof.n_a);
    let m = model.lambda_dim();
    let nv = m + n_a;
    // f = S eta_a with S = [0; R_a^T].
    let mut s = Mat::zeros(n, n_a);
    s.view_mut((n_u, 0), (n_a, n_a)).copy_from(&axes.r_a.transpose());

    let mut a_eq = Mat::zeros(n, nv);
    a_eq.columns_mut(0, m).copy_from(&model.jf().transpose());
    a_eq.columns_mut(m, n_a).copy_from(&s);
    let b_eq = -model.external();

    let guard = model.guard();
    let mut a_in = Mat::zeros(guard.lambda.nrows(), nv);
    a_in.columns_mut(0, m).copy_from(&guard.lambda.columns(0, m));
    a_in.columns_mut(m, n_a).copy_from(&(guard.lambda.columns(m, n) * &s));

    let p = QpProblem::new(
        Mat::identity(nv, nv) * 2.0,
        Vector::zeros(nv),
        a_eq,
        b_eq,
        a_in,
        guard.b.clone(),
    )?;
    let sol = qp_solve(&p, limits);
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => {
            return Err(SolveError::GuardInfeasible {
                bound: sol.infeasibility_bound.unwrap_or(f64::NAN),
            })
        }
        QpStatus::MaxIter => {
            return Err(SolveError::QpIterationCap {
                iterations: sol.iterations,
            })
        }
    }
    let lambda = sol.x.rows(0, m).into_owned();
    let eta_a = sol.x.rows(m, n_a).into_owned();
    let eta_af = eta_a.rows(0, axes.n_af).into_owned();
    Ok(ForceControl {
        kkt: sol.kkt(&p),
        iterations: sol.iterations,
        lambda,
        eta_a,
        eta_af,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Timings {
    pub velocity_us: f64,
    pub force_us: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HfvcSolution {
    pub n_av: usize,
    pub n_af: usize,
    pub c: Mat,
    pub r_a: Mat,
    pub t: Mat,
    pub w_av: Vector,
    pub eta_af: Vector,
    pub eta_a: Vector,
    pub lambda: Vector,
    /// 1 when no velocity control is needed.
    pub crashing_index: f64,
    pub ill_conditioned: bool,
    pub timings: Timings,
    pub goal_redundant: bool,
}

impl HfvcSolution {
    /// Actuation force `f_a = R_a^T eta_a` in robot coordinates.
    pub fn actuation_force(&self) -> Vector {
        self.r_a.transpose() * &self.eta_a
    }

    /// Force command along the force-controlled axes, in robot coordinates.
    pub fn force_command(&self) -> Vector {
        self.r_a.rows(0, self.n_af).transpose() * &self.eta_af
    }

    pub fn report(&self) -> SolutionReport {
        SolutionReport {
            n_av: self.n_av,
            n_af: self.n_af,
            r_a: mat_rows(&self.r_a),
            c: mat_rows(&self.c),
            w_av: self.w_av.iter().copied().collect(),
            eta_af: self.eta_af.iter().copied().collect(),
            crashing_index: self.crashing_index,
            timings: self.timings,
            status: "solved",
        }
    }
}

pub fn mat_rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// `f64` that serializes infinities as the string `"inf"`.
pub fn serialize_index<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else if x.is_nan() {
        s.serialize_str("nan")
    } else if *x > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

/// JSON form of a solution; field order is fixed.
#[derive(Debug, Clone, Serialize)]
pub struct SolutionReport {
    pub n_av: usize,
    pub n_af: usize,
    #[serde(rename = "R_a")]
    pub r_a: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    pub w_av: Vec<f64>,
    pub eta_af: Vec<f64>,
    #[serde(serialize_with = "serialize_index")]
    pub crashing_index: f64,
    pub timings: Timings,
    pub status: &'static str,
}

fn micros(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e6
}

pub fn ochs_solve(model: &SystemModel, opts: &SolveOptions) -> Result<HfvcSolution, SolveError> {
    opts.validate()?;
    let dof = model.dof();

    let start = Instant::now();
    let vel = solve_velocity(model, opts)?;
    let axes = complete_axes(&vel.c, dof, opts.rank_tol).map_err(num(Stage::Velocity))?;
    let velocity_us = micros(start);

    let start = Instant::now();
    let force = solve_force(model, &axes, opts.qp_limits)?;
    let force_us = micros(start);

    let crashing_index = if vel.n_av == 0 {
        1.0
    } else {
        crashing_index(model.j(), &vel.c, opts.rank_tol).map_err(num(Stage::Velocity))?
    };
    Ok(HfvcSolution {
        n_av: vel.n_av,
        n_af: axes.n_af,
        c: vel.c,
        r_a: axes.r_a,
        t: axes.t,
        w_av: vel.w_av,
        eta_af: force.eta_af,
        eta_a: force.eta_a,
        lambda: force.lambda,
        ill_conditioned: crashing_index.is_finite() && crashing_index > opts.ill_conditioned_threshold,
        crashing_index,
        timings: Timings { velocity_us, force_us },
        goal_redundant: model.goal().redundant,
    })
}

/// Residuals of every solution invariant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolutionCheck {
    /// `|G N^T|` with `N` spanning the null space of `[J; C]`.
    pub goal_null_space: f64,
    /// `|G v - b_G|` for the minimum-norm `v` with `[J; C] v = [0; w_av]`.
    pub goal_special_solution: f64,
    pub c_orthonormality: f64,
    pub r_a_orthonormality: f64,
    pub t_orthonormality: f64,
    pub c_unactuated: f64,
    pub newton_residual: f64,
    pub guard_violation: f64,
}

impl SolutionCheck {
    pub fn passes(&self) -> bool {
        self.goal_null_space <= 1e-8
            && self.goal_special_solution <= 1e-6
            && self.c_orthonormality <= 1e-10
            && self.r_a_orthonormality <= 1e-10
            && self.t_orthonormality <= 1e-10
            && self.c_unactuated == 0.0
            && self.newton_residual <= 1e-6
            && self.guard_violation <= 1e-6
    }
}

pub fn check_solution(model: &SystemModel, sol: &HfvcSolution, tol: RankTol) -> Result<SolutionCheck, LinalgError> {
    let dof = model.dof();
    let (j, g) = (model.j(), model.g());
    let jc = linalg::vstack(&[j, &sol.c]);
    let null_jc = if jc.nrows() == 0 {
        Mat::identity(dof.n(), dof.n())
    } else {
        linalg::null_rows(&jc, tol)?
    };
    let goal_null_space = if g.nrows() == 0 || null_jc.nrows() == 0 {
        0.0
    } else {
        (g * null_jc.transpose()).amax()
    };
    let mut rhs = Vector::zeros(jc.nrows());
    rhs.rows_mut(j.nrows(), sol.n_av).copy_from(&sol.w_av);
    let goal_special_solution = match linalg::min_norm_solve(&jc, &rhs, tol) {
        Ok(v) => (g * v - model.b_g()).norm(),
        Err(LinalgError::Inconsistent { .. }) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    let c_unactuated = sol.c.columns(0, dof.n_u).amax();

    let f = {
        let mut f = Vector::zeros(dof.n());
        f.rows_mut(dof.n_u, dof.n_a).copy_from(&sol.actuation_force());
        f
    };
    let newton = model.jf().transpose() * &sol.lambda + &f + model.external();
    let mut stacked = Vector::zeros(sol.lambda.len() + dof.n());
    stacked.rows_mut(0, sol.lambda.len()).copy_from(&sol.lambda);
    stacked.rows_mut(sol.lambda.len(), dof.n()).copy_from(&f);
    let guard_violation = if model.guard().b.is_empty() {
        0.0
    } else {
        model.guard().max_violation(&stacked).max(0.0)
    };
    Ok(SolutionCheck {
        goal_null_space,
        goal_special_solution,
        c_orthonormality: linalg::orthonormality_defect(&sol.c),
        r_a_orthonormality: linalg::orthonormality_defect(&sol.r_a),
        t_orthonormality: linalg::orthonormality_defect(&sol.t),
        c_unactuated,
        newton_residual: newton.amax(),
        guard_violation,
    })
}
