//! Quick invariant checks run by the `selftest` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::bench::{determinism_digest, run_benchmark, BenchConfig, Family};
use crate::linalg::{self, Mat, RankTol, Vector};
use crate::ochs::{crashing_index, SolveOptions};
use crate::qp::{qp_solve, QpLimits, QpProblem, QpStatus};
use crate::tilt::{run_tilt, TiltParams};

#[derive(Debug, Clone, Serialize)]
pub struct SelfCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn svd_reconstruction(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (m, n) = (rng.random_range(1..=12), rng.random_range(1..=12));
        let r = rng.random_range(0..=m.min(n));
        let a = gaussian(rng, m, r) * gaussian(rng, r, n);
        let s = linalg::svd(&a).map_err(|e| e.to_string())?;
        let sigma = Mat::from_diagonal(&Vector::from_vec(s.singular_values.clone()));
        let err = (&s.u * sigma * &s.v_t - &a).amax() / a.amax().max(1.0);
        worst = worst.max(err);
        if s.rank(RankTol::default()) != r {
            return Err(format!("rank {} for a rank-{r} product", s.rank(RankTol::default())));
        }
    }
    if worst <= 1e-10 {
        Ok(format!("max relative error {worst:.1e}"))
    } else {
        Err(format!("max relative error {worst:.1e}"))
    }
}

fn qp_kkt(rng: &mut ChaCha8Rng) -> Result<String, String> {
    for case in 0..200 {
        let n = rng.random_range(1..=6);
        let m = gaussian(rng, n, n);
        let h = m.transpose() * &m + Mat::identity(n, n) * 0.1;
        let g = gaussian(rng, n, 1).column(0).into_owned();
        let rows = rng.random_range(0..=8);
        let a_in = gaussian(rng, rows, n);
        let x0 = gaussian(rng, n, 1).column(0).into_owned();
        let b_in = &a_in * &x0 + Vector::from_element(a_in.nrows(), 0.5);
        let p = QpProblem::new(h, g, Mat::zeros(0, n), Vector::zeros(0), a_in, b_in).map_err(|e| e.to_string())?;
        let sol = qp_solve(&p, QpLimits::default());
        if sol.status != QpStatus::Optimal || !sol.kkt(&p).within(1e-8) {
            return Err(format!("case {case}: {:?} {:?}", sol.status, sol.kkt(&p)));
        }
    }
    Ok("200 feasible problems meet KKT within 1e-8".into())
}

fn analytic_index() -> Result<String, String> {
    let j = Mat::from_row_slice(1, 2, &[1.0, 0.0]);
    for deg in [15.0f64, 30.0, 45.0, 60.0, 75.0] {
        let t = deg.to_radians();
        let c = Mat::from_row_slice(1, 2, &[t.cos(), t.sin()]);
        let got = crashing_index(&j, &c, RankTol::default()).map_err(|e| e.to_string())?;
        let want = ((1.0 + t.cos()) / (1.0 - t.cos())).sqrt();
        if (got - want).abs() > 1e-8 * want {
            return Err(format!("{deg} deg: {got} vs {want}"));
        }
    }
    Ok("five angles match the closed form".into())
}

fn bench_invariants() -> Result<String, String> {
    let cfg = BenchConfig {
        family: Family::Planar,
        problems: 60,
        seed: 11,
        oracle_samples: 20,
        ..BenchConfig::default()
    };
    let records = run_benchmark(&cfg)?;
    let solved = records.iter().filter(|r| r.solved()).count();
    if let Some(r) = records.iter().find(|r| r.status == "check_failed") {
        return Err(format!("problem {} failed the solution checks", r.problem_id));
    }
    if let Some(r) = records.iter().find(|r| r.oracle_gap.is_some_and(|g| g < -1e-6)) {
        return Err(format!("problem {} has oracle gap {:?}", r.problem_id, r.oracle_gap));
    }
    if determinism_digest(&records) != determinism_digest(&run_benchmark(&cfg)?) {
        return Err("two runs with one seed differ".into());
    }
    Ok(format!("{solved}/{} solved, no check failures or oracle violations, deterministic", records.len()))
}

fn tilt_trajectory() -> Result<String, String> {
    let steps = run_tilt(&TiltParams::default(), &SolveOptions::default()).map_err(|e| e.to_string())?;
    for s in &steps {
        if (s.solution.n_av, s.solution.n_af) != (1, 2) || s.force_y_fraction() > 0.05 {
            return Err(format!("step {}: n_av {} n_af {}", s.step, s.solution.n_av, s.solution.n_af));
        }
    }
    Ok(format!("{} steps solved", steps.len()))
}

/// Runs every check with a fixed seed.
pub fn run_selftest() -> Vec<SelfCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f);
    let mut out = Vec::new();
    let mut record = |name, result: Result<String, String>| {
        let (passed, detail) = match result {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        out.push(SelfCheck { name, passed, detail });
    };
    record("svd_reconstruction", svd_reconstruction(&mut rng));
    record("qp_kkt", qp_kkt(&mut rng));
    record("analytic_crashing_index", analytic_index());
    record("bench_invariants", bench_invariants());
    record("tilt_trajectory", tilt_trajectory());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_selftest() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
