//! Randomized benchmark: problem families, per-problem evaluation with a
//! sampling comparator, and aggregate statistics.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::linalg::{self, LinalgError, Mat, RankTol, Vector};
use crate::model::{
    assemble_jacobians, build_goal, build_guards, layout_bodies, Body, BodyKind, ContactMode, ContactPoint,
    ModelError, SystemModel,
};
use crate::ochs::{
    check_solution, crashing_index, free_robot_motions, ochs_solve, SolutionCheck, SolveOptions,
    VelocityDimMode,
};
use crate::qp::QpLimits;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Planar,
    Spatial,
}

impl Family {
    pub fn dim(self) -> usize {
        match self {
            Family::Planar => 2,
            Family::Spatial => 3,
        }
    }

    fn body_kind(self) -> BodyKind {
        match self {
            Family::Planar => BodyKind::Planar,
            Family::Spatial => BodyKind::Spatial,
        }
    }
}

/// One problem family: environment contact modes (`f` sticking, `s`
/// sliding, one letter per contact) and the finger layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Cell {
    pub family: Family,
    pub env_modes: String,
    pub fingers: usize,
    pub contacts_per_finger: usize,
}

impl Cell {
    pub fn label(&self) -> String {
        format!("{}-{}x{}", self.env_modes, self.fingers, self.contacts_per_finger)
    }
}

/// All cells of a family in a fixed order.
pub fn cells(family: Family) -> Vec<Cell> {
    let (modes, fingers, per_finger): (&[&str], &[usize], &[usize]) = match family {
        Family::Planar => (&["f", "s", "ss"], &[1], &[1, 2]),
        Family::Spatial => (&["f", "s", "ff", "fs", "ss", "ffs", "fss", "sss"], &[1, 2, 3], &[1, 2, 3]),
    };
    let mut out = Vec::new();
    for m in modes {
        for &f in fingers {
            for &c in per_finger {
                out.push(Cell {
                    family,
                    env_modes: (*m).to_string(),
                    fingers: f,
                    contacts_per_finger: c,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub family: Family,
    /// Total problem count, assigned to cells round-robin by problem id.
    pub problems: usize,
    pub seed: u64,
    pub mode: VelocityDimMode,
    /// Keep only cells whose label is listed; empty keeps all.
    pub cells: Vec<String>,
    /// Comparator samples per solved problem; 0 disables the comparator.
    pub oracle_samples: usize,
    pub ill_conditioned_threshold: f64,
    pub rank_tol: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    /// Gravity load on the object along the last world axis.
    pub object_weight: f64,
    /// Normal-force floor; 0 leaves the guard as friction cones only.
    pub n_min: f64,
    pub ridge_count: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            family: Family::Planar,
            problems: 600,
            seed: 0,
            mode: VelocityDimMode::Minimal,
            cells: Vec::new(),
            oracle_samples: 0,
            ill_conditioned_threshold: 100.0,
            rank_tol: 1e-9,
            mu_min: 0.3,
            mu_max: 1.0,
            object_weight: 0.0,
            n_min: 0.0,
            ridge_count: 8,
        }
    }
}

impl BenchConfig {
    pub fn solve_options(&self) -> Result<SolveOptions, String> {
        let opts = SolveOptions {
            mode: self.mode,
            rank_tol: RankTol::new(self.rank_tol).map_err(|e| format!("rank_tol: {e}"))?,
            ill_conditioned_threshold: self.ill_conditioned_threshold,
            qp_limits: QpLimits::default(),
        };
        opts.validate().map_err(|e| e.to_string())?;
        Ok(opts)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.solve_options()?;
        if !(0.0 <= self.mu_min && self.mu_min <= self.mu_max && self.mu_max.is_finite()) {
            return Err(format!("friction range [{}, {}] is invalid", self.mu_min, self.mu_max));
        }
        if !(self.object_weight.is_finite() && self.n_min.is_finite()) {
            return Err("object_weight and n_min must be finite".into());
        }
        if self.family == Family::Spatial && self.ridge_count < 3 {
            return Err("ridge_count must be at least 3".into());
        }
        let all = cells(self.family);
        for label in &self.cells {
            if !all.iter().any(|c| &c.label() == label) {
                return Err(format!("unknown cell {label:?} for the {:?} family", self.family));
            }
        }
        if self.selected_cells().is_empty() {
            return Err("no cells selected".into());
        }
        Ok(())
    }

    pub fn selected_cells(&self) -> Vec<Cell> {
        cells(self.family)
            .into_iter()
            .filter(|c| self.cells.is_empty() || self.cells.contains(&c.label()))
            .collect()
    }
}

/// Independent stream for problem `id`; `purpose` 0 generates, 1 samples.
pub fn problem_rng(seed: u64, id: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * id + purpose);
    rng
}

fn gaussian_vec<R: Rng>(rng: &mut R, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn gaussian_mat<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn random_unit<R: Rng>(rng: &mut R, d: usize) -> Vector {
    loop {
        let v = gaussian_vec(rng, d);
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// Unit normal pointing from `position` towards the object interior.
fn inward_normal<R: Rng>(rng: &mut R, position: &Vector) -> Vector {
    let n = random_unit(rng, position.len());
    if n.dot(position) > 0.0 {
        -n
    } else {
        n
    }
}

fn random_tangent<R: Rng>(rng: &mut R, normal: &Vector) -> Vector {
    loop {
        let v = gaussian_vec(rng, normal.len());
        let t = &v - normal * v.dot(normal);
        if t.norm() > 1e-6 {
            return t.normalize();
        }
    }
}

/// Random problem for `cell`. The goal constrains `k` random directions of
/// the robot-reachable part of the contact-consistent motions, with a
/// right-hand side taken from a random consistent motion.
pub fn generate_problem<R: Rng>(cfg: &BenchConfig, cell: &Cell, rng: &mut R) -> Result<SystemModel, ModelError> {
    let d = cell.family.dim();
    let tol = RankTol::new(cfg.rank_tol)?;
    let kind = cell.family.body_kind();
    let box_point = |rng: &mut R| Vector::from_fn(d, |_, _| rng.random_range(-0.5..0.5));

    let mut contacts: Vec<(Vector, Vector, ContactMode, usize)> = Vec::new();
    for m in cell.env_modes.chars() {
        let p = box_point(rng);
        let n = inward_normal(rng, &p);
        let mode = if m == 's' {
            ContactMode::Sliding {
                direction: random_tangent(rng, &n),
            }
        } else {
            ContactMode::Sticking
        };
        contacts.push((p, n, mode, 1));
    }
    let mut bodies = vec![
        Body {
            name: "object".into(),
            kind,
            actuated: false,
            origin: Vector::zeros(d),
        },
        Body {
            name: "environment".into(),
            kind: BodyKind::Environment,
            actuated: false,
            origin: Vector::zeros(d),
        },
    ];
    for f in 0..cell.fingers {
        let mut origin = Vector::zeros(d);
        for _ in 0..cell.contacts_per_finger {
            let p = box_point(rng);
            let n = inward_normal(rng, &p);
            origin += &p / cell.contacts_per_finger as f64;
            contacts.push((p, n, ContactMode::Sticking, 2 + f));
        }
        bodies.push(Body {
            name: format!("finger{f}"),
            kind,
            actuated: true,
            origin,
        });
    }
    let contacts = contacts
        .into_iter()
        .map(|(p, n, mode, other)| {
            let mu = rng.random_range(cfg.mu_min..=cfg.mu_max);
            ContactPoint::new(p, n, None, mode, mu, (0, other))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let (dof, slots) = layout_bodies(d, &bodies)?;
    let n = dof.n();
    let jac = assemble_jacobians(d, n, &slots, &contacts)?;
    let specs: Vec<_> = contacts
        .iter()
        .zip(&jac.lambda_offsets)
        .map(|(c, &o)| c.guard_spec(o))
        .collect();
    let guard = build_guards(&specs, jac.lambda_dim + n, cfg.n_min, cfg.ridge_count)?;

    let null = linalg::null_rows(&jac.j, tol)?;
    let u_bar = free_robot_motions(&jac.j, dof, tol)?;
    let reach = linalg::row_basis_scaled(&(&u_bar * null.transpose() * &null), tol, 1.0)?;
    let g = if reach.nrows() == 0 {
        let mut row = Mat::zeros(1, n);
        row.view_mut((0, 0), (1, dof.n_u)).copy_from(&random_unit(rng, dof.n_u).transpose());
        row
    } else {
        let k = rng.random_range(1..=reach.nrows());
        let mix = linalg::orthonormalize_rows(&gaussian_mat(rng, reach.nrows(), reach.nrows()));
        mix.rows(0, k) * &reach
    };
    let v_target = null.transpose() * gaussian_vec(rng, null.nrows());
    let b = &g * v_target;
    let goal = build_goal(&jac.j, g, b, tol)?;

    let mut external = Vector::zeros(n);
    external[d - 1] = -cfg.object_weight;
    SystemModel::new(dof, jac.j, jac.jf, goal, external, guard)
}

/// Rows spanning the actuated directions a control matrix of the given
/// mode may draw from while keeping the goal reachable.
pub fn admissible_control_space(model: &SystemModel, mode: VelocityDimMode, tol: RankTol) -> Result<Mat, LinalgError> {
    let dof = model.dof();
    let (n_u, n_a) = (dof.n_u, dof.n_a);
    let actuated = match mode {
        VelocityDimMode::Maximal => Mat::identity(n_a, n_a),
        VelocityDimMode::Minimal => {
            let null_jg = linalg::null_rows(&linalg::vstack(&[model.j(), model.g()]), tol)?;
            if null_jg.nrows() == 0 {
                Mat::identity(n_a, n_a)
            } else {
                linalg::null_rows_scaled(&null_jg.columns(n_u, n_a).into_owned(), tol, 1.0)?
            }
        }
    };
    let mut out = Mat::zeros(actuated.nrows(), dof.n());
    out.columns_mut(n_u, n_a).copy_from(&actuated);
    Ok(out)
}

/// Whether `[J; C]` has independent control rows and implies the goal.
pub fn is_feasible_control(model: &SystemModel, c: &Mat, tol: RankTol) -> Result<bool, LinalgError> {
    let rank_j = linalg::rank(model.j(), tol)?;
    let jc = linalg::vstack(&[model.j(), c]);
    let rank_jc = linalg::rank(&jc, tol)?;
    let rank_jcg = linalg::rank(&linalg::vstack(&[&jc, model.g()]), tol)?;
    Ok(rank_jc == rank_j + c.nrows() && rank_jcg == rank_jc)
}

/// Feasible orthonormal control matrices with as many rows as `c_ochs`:
/// half drawn uniformly from the admissible space, half small perturbations
/// of `c_ochs`. Infeasible draws are discarded, so fewer than `count` may
/// come back.
pub fn sample_alternative_controls<R: Rng>(
    model: &SystemModel,
    c_ochs: &Mat,
    mode: VelocityDimMode,
    count: usize,
    tol: RankTol,
    rng: &mut R,
) -> Result<Vec<Mat>, LinalgError> {
    let k = c_ochs.nrows();
    if count == 0 || k == 0 {
        return Ok(Vec::new());
    }
    let space = admissible_control_space(model, mode, tol)?;
    let dim = space.nrows();
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let candidate = if i % 2 == 0 || dim < k {
            if dim < k {
                break;
            }
            linalg::orthonormalize_rows(&(gaussian_mat(rng, k, dim) * &space))
        } else {
            let scale = 10f64.powf(rng.random_range(-4.0..-1.0));
            let noise = gaussian_mat(rng, k, dim) * &space * scale;
            linalg::orthonormalize_rows(&(c_ochs + noise))
        };
        if is_feasible_control(model, &candidate, tol)? {
            out.push(candidate);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub problem_id: u64,
    pub cell: String,
    /// `solved` or the failure label.
    pub status: String,
    pub n_av: Option<usize>,
    pub n_af: Option<usize>,
    pub crashing_index: Option<f64>,
    pub velocity_time_us: Option<f64>,
    pub force_time_us: Option<f64>,
    /// Best sampled alternative index minus the solver's index.
    pub oracle_gap: Option<f64>,
    pub oracle_samples: usize,
    #[serde(skip)]
    pub check: Option<SolutionCheck>,
}

impl BenchRecord {
    pub fn solved(&self) -> bool {
        self.status == "solved"
    }
}

/// Solve one model and, when solved, verify it and run the comparator.
pub fn evaluate_problem<R: Rng>(
    model: &SystemModel,
    opts: &SolveOptions,
    oracle_samples: usize,
    problem_id: u64,
    cell: &str,
    oracle_rng: &mut R,
) -> BenchRecord {
    let mut record = BenchRecord {
        problem_id,
        cell: cell.to_string(),
        status: String::new(),
        n_av: None,
        n_af: None,
        crashing_index: None,
        velocity_time_us: None,
        force_time_us: None,
        oracle_gap: None,
        oracle_samples: 0,
        check: None,
    };
    let sol = match ochs_solve(model, opts) {
        Ok(sol) => sol,
        Err(e) => {
            record.status = e.label().to_string();
            return record;
        }
    };
    record.n_av = Some(sol.n_av);
    record.n_af = Some(sol.n_af);
    record.crashing_index = Some(sol.crashing_index);
    record.velocity_time_us = Some(sol.timings.velocity_us);
    record.force_time_us = Some(sol.timings.force_us);
    match check_solution(model, &sol, opts.rank_tol) {
        Ok(check) => {
            record.status = if check.passes() { "solved" } else { "check_failed" }.into();
            record.check = Some(check);
        }
        Err(_) => {
            record.status = "check_failed".into();
            return record;
        }
    }
    if oracle_samples > 0 && sol.n_av > 0 {
        let alts = sample_alternative_controls(model, &sol.c, opts.mode, oracle_samples, opts.rank_tol, oracle_rng)
            .unwrap_or_default();
        let best = alts
            .iter()
            .filter_map(|c| crashing_index(model.j(), c, opts.rank_tol).ok())
            .fold(f64::INFINITY, f64::min);
        record.oracle_samples = alts.len();
        if !alts.is_empty() {
            record.oracle_gap = Some(if best == sol.crashing_index { 0.0 } else { best - sol.crashing_index });
        }
    }
    record
}

/// Cell and model of problem `id`; depends only on the seed, the cell list
/// and `id`.
pub fn build_problem<'a>(
    cfg: &BenchConfig,
    cells: &'a [Cell],
    id: u64,
) -> (&'a Cell, Result<SystemModel, ModelError>) {
    let cell = &cells[id as usize % cells.len()];
    let mut rng = problem_rng(cfg.seed, id, 0);
    (cell, generate_problem(cfg, cell, &mut rng))
}

/// Generate and evaluate every problem; records come back sorted by id.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<Vec<BenchRecord>, String> {
    cfg.validate()?;
    let opts = cfg.solve_options()?;
    let cells = cfg.selected_cells();
    let mut records: Vec<BenchRecord> = (0..cfg.problems as u64)
        .into_par_iter()
        .map(|id| {
            let (cell, generated) = build_problem(cfg, &cells, id);
            let label = cell.label();
            match generated {
                Ok(model) => {
                    let mut oracle_rng = problem_rng(cfg.seed, id, 1);
                    evaluate_problem(&model, &opts, cfg.oracle_samples, id, &label, &mut oracle_rng)
                }
                Err(_) => BenchRecord {
                    problem_id: id,
                    cell: label,
                    status: "generation_failed".into(),
                    n_av: None,
                    n_af: None,
                    crashing_index: None,
                    velocity_time_us: None,
                    force_time_us: None,
                    oracle_gap: None,
                    oracle_samples: 0,
                    check: None,
                },
            }
        })
        .collect();
    records.sort_by_key(|r| r.problem_id);
    Ok(records)
}

pub const CSV_COLUMNS: [&str; 9] = [
    "problem_id",
    "cell",
    "status",
    "n_av",
    "n_af",
    "crashing_index",
    "velocity_time_us",
    "force_time_us",
    "oracle_gap",
];

fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else if x > 0.0 {
        "inf".into()
    } else if x < 0.0 {
        "-inf".into()
    } else {
        "nan".into()
    }
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn opt_f(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// CSV of the records; without `timing` the two timing columns are blank.
pub fn records_csv(records: &[BenchRecord], timing: bool) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).expect("in-memory write");
    for r in records {
        let (vt, ft) = if timing {
            (opt_f(r.velocity_time_us), opt_f(r.force_time_us))
        } else {
            (String::new(), String::new())
        };
        w.write_record([
            r.problem_id.to_string(),
            r.cell.clone(),
            r.status.clone(),
            opt(r.n_av),
            opt(r.n_af),
            opt_f(r.crashing_index),
            vt,
            ft,
            opt_f(r.oracle_gap),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// SHA-256 of the records CSV with timing columns blanked.
pub fn determinism_digest(records: &[BenchRecord]) -> String {
    let digest = Sha256::digest(records_csv(records, false).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeStats {
    pub average: f64,
    pub median: f64,
    pub worst: f64,
}

impl TimeStats {
    /// Statistics in milliseconds from microsecond samples.
    fn from_us(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut s: Vec<f64> = samples.iter().map(|x| x / 1000.0).collect();
        s.sort_by(f64::total_cmp);
        let mid = s.len() / 2;
        let median = if s.len() % 2 == 1 { s[mid] } else { 0.5 * (s[mid - 1] + s[mid]) };
        Some(Self {
            average: s.iter().sum::<f64>() / s.len() as f64,
            median,
            worst: *s.last().unwrap(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProblemCounts {
    #[serde(rename = "problems")]
    pub total: usize,
    pub solved: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleStats {
    pub problems_compared: usize,
    pub samples: usize,
    pub violations: usize,
    pub min_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stats {
    #[serde(flatten)]
    pub problems: ProblemCounts,
    pub average_crashing_index: Option<f64>,
    pub ill_conditioned_solutions: usize,
    pub velocity_time_ms: Option<TimeStats>,
    pub force_time_ms: Option<TimeStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellStats {
    pub cell: String,
    #[serde(flatten)]
    pub stats: Stats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    #[serde(flatten)]
    pub overall: Stats,
    pub oracle: OracleStats,
    pub status_counts: BTreeMap<String, usize>,
    pub determinism_digest: String,
    pub cells: Vec<CellStats>,
}

fn stats(records: &[&BenchRecord], threshold: f64) -> Stats {
    let solved: Vec<&&BenchRecord> = records.iter().filter(|r| r.solved()).collect();
    let finite: Vec<f64> = solved
        .iter()
        .filter_map(|r| r.crashing_index)
        .filter(|x| x.is_finite())
        .collect();
    let vt: Vec<f64> = solved.iter().filter_map(|r| r.velocity_time_us).collect();
    let ft: Vec<f64> = solved.iter().filter_map(|r| r.force_time_us).collect();
    Stats {
        problems: ProblemCounts {
            total: records.len(),
            solved: solved.len(),
        },
        average_crashing_index: (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64),
        ill_conditioned_solutions: finite.iter().filter(|&&x| x > threshold).count(),
        velocity_time_ms: TimeStats::from_us(&vt),
        force_time_ms: TimeStats::from_us(&ft),
    }
}

pub fn summarize(records: &[BenchRecord], ill_conditioned_threshold: f64) -> Summary {
    let all: Vec<&BenchRecord> = records.iter().collect();
    let mut by_cell: BTreeMap<&str, Vec<&BenchRecord>> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    let mut status_counts = BTreeMap::new();
    for r in records {
        by_cell
            .entry(&r.cell)
            .or_insert_with(|| {
                order.push(&r.cell);
                Vec::new()
            })
            .push(r);
        *status_counts.entry(r.status.clone()).or_insert(0) += 1;
    }
    let gaps: Vec<f64> = records.iter().filter_map(|r| r.oracle_gap).collect();
    Summary {
        overall: stats(&all, ill_conditioned_threshold),
        oracle: OracleStats {
            problems_compared: gaps.len(),
            samples: records.iter().map(|r| r.oracle_samples).sum(),
            violations: gaps.iter().filter(|&&g| g < -1e-6).count(),
            min_gap: gaps.iter().copied().reduce(f64::min),
        },
        status_counts,
        determinism_digest: determinism_digest(records),
        cells: order
            .into_iter()
            .map(|c| CellStats {
                cell: c.to_string(),
                stats: stats(&by_cell[c], ill_conditioned_threshold),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DofPartition, GuardConditions};

    fn cfg(family: Family, problems: usize) -> BenchConfig {
        BenchConfig {
            family,
            problems,
            seed: 7,
            ..BenchConfig::default()
        }
    }

    #[test]
    fn cell_counts() {
        assert_eq!(cells(Family::Planar).len(), 6);
        assert_eq!(cells(Family::Spatial).len(), 72);
    }

    #[test]
    fn planar_single_contact_sizes() {
        let c = cfg(Family::Planar, 1);
        let cell = &cells(Family::Planar)[0];
        assert_eq!(cell.label(), "f-1x1");
        let model = generate_problem(&c, cell, &mut problem_rng(1, 0, 0)).unwrap();
        assert_eq!((model.dof().n_u, model.dof().n_a), (3, 3));
        assert_eq!(model.j().nrows(), 4);
    }

    #[test]
    fn largest_spatial_cell_has_24_dof() {
        let c = cfg(Family::Spatial, 1);
        let cell = cells(Family::Spatial).into_iter().find(|c| c.label() == "sss-3x3").unwrap();
        let model = generate_problem(&c, &cell, &mut problem_rng(1, 0, 0)).unwrap();
        assert_eq!(model.dof().n(), 24);
    }

    #[test]
    fn generation_is_deterministic() {
        let c = cfg(Family::Spatial, 1);
        let cell = &cells(Family::Spatial)[40];
        let a = generate_problem(&c, cell, &mut problem_rng(3, 5, 0)).unwrap();
        let b = generate_problem(&c, cell, &mut problem_rng(3, 5, 0)).unwrap();
        assert_eq!(a.j(), b.j());
        assert_eq!(a.jf(), b.jf());
        assert_eq!(a.g(), b.g());
        assert_eq!(a.b_g(), b.b_g());
        assert_eq!(a.guard(), b.guard());
    }

    #[test]
    fn benchmark_is_deterministic() {
        let c = BenchConfig {
            oracle_samples: 10,
            ..cfg(Family::Planar, 30)
        };
        let a = run_benchmark(&c).unwrap();
        let b = run_benchmark(&c).unwrap();
        assert_eq!(records_csv(&a, false), records_csv(&b, false));
        assert_eq!(determinism_digest(&a), determinism_digest(&b));
    }

    fn free_model() -> SystemModel {
        let dof = DofPartition::new(0, 2).unwrap();
        let j = Mat::zeros(0, 2);
        let goal = build_goal(&j, Mat::from_row_slice(1, 2, &[0.6, 0.8]), Vector::from_row_slice(&[1.0]), RankTol::default())
            .unwrap();
        SystemModel::new(dof, j, Mat::zeros(0, 2), goal, Vector::zeros(2), GuardConditions::empty(2, 0.5)).unwrap()
    }

    #[test]
    fn free_problems_all_solve_with_unit_index() {
        let model = free_model();
        let opts = SolveOptions::default();
        let records: Vec<_> = (0..10)
            .map(|i| evaluate_problem(&model, &opts, 20, i, "free", &mut problem_rng(0, i, 1)))
            .collect();
        let s = summarize(&records, 100.0);
        assert_eq!(s.overall.problems, ProblemCounts { total: 10, solved: 10 });
        assert_eq!(s.overall.average_crashing_index, Some(1.0));
        assert_eq!(s.oracle.violations, 0);
    }

    #[test]
    fn one_dimensional_slack_never_beats_the_solver() {
        // J = [1, 0] on two robot DOF, goal on the second axis: any control
        // row [cos t, sin t] with sin t != 0 is admissible.
        let dof = DofPartition::new(0, 2).unwrap();
        let j = Mat::from_row_slice(1, 2, &[1.0, 0.0]);
        let goal = build_goal(&j, Mat::from_row_slice(1, 2, &[0.0, 1.0]), Vector::from_row_slice(&[1.0]), RankTol::default())
            .unwrap();
        let guard = GuardConditions::empty(1 + 2, 0.5);
        let model = SystemModel::new(dof, j.clone(), Mat::zeros(1, 2), goal, Vector::zeros(2), guard).unwrap();
        let opts = SolveOptions::default();
        let sol = ochs_solve(&model, &opts).unwrap();
        for k in 1..1000 {
            let t = std::f64::consts::PI * k as f64 / 1000.0;
            let c = Mat::from_row_slice(1, 2, &[t.cos(), t.sin()]);
            assert!(crashing_index(&j, &c, opts.rank_tol).unwrap() >= sol.crashing_index - 1e-12);
        }
        let alts = sample_alternative_controls(&model, &sol.c, opts.mode, 50, opts.rank_tol, &mut problem_rng(0, 0, 1))
            .unwrap();
        assert!(!alts.is_empty());
        for c in &alts {
            assert!(crashing_index(&j, c, opts.rank_tol).unwrap() >= sol.crashing_index - 1e-12);
        }
    }

    #[test]
    fn no_samples_requested() {
        let model = free_model();
        let sol = ochs_solve(&model, &SolveOptions::default()).unwrap();
        let alts =
            sample_alternative_controls(&model, &sol.c, VelocityDimMode::Minimal, 0, RankTol::default(), &mut problem_rng(0, 0, 1))
                .unwrap();
        assert!(alts.is_empty());
    }

    #[test]
    fn unique_space_yields_rotations() {
        let model = free_model();
        let opts = SolveOptions::default();
        let sol = ochs_solve(&model, &opts).unwrap();
        // With the goal fixing the only direction, every sample spans C.
        let alts = sample_alternative_controls(&model, &sol.c, opts.mode, 20, opts.rank_tol, &mut problem_rng(0, 0, 1))
            .unwrap();
        for c in &alts {
            assert!((c * sol.c.transpose()).amax() > 1.0 - 1e-9);
        }
    }

    #[test]
    fn csv_has_spec_header() {
        let csv = records_csv(&[], true);
        assert_eq!(csv.trim(), CSV_COLUMNS.join(","));
    }

    #[test]
    fn config_rejects_unknown_cells() {
        let c = BenchConfig {
            cells: vec!["nope".into()],
            ..cfg(Family::Planar, 1)
        };
        assert!(c.validate().is_err());
    }
}
