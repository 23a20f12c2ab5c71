mod common;

use hfvc::linalg::{self, RankTol};
use hfvc::model::Scene;
use hfvc::ochs::{
    check_solution, crashing_index, ochs_solve, InfeasibleReason, SolveError, SolveOptions, VelocityDimMode,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn load(name: &str) -> hfvc::model::SceneModel {
    let path = format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(path).unwrap();
    Scene::from_json(&text).unwrap().build(RankTol::default()).unwrap()
}

#[test]
fn free_robot_is_perfectly_conditioned() {
    let scene = load("free_robot.json");
    let sol = ochs_solve(&scene.model, &SolveOptions::default()).unwrap();
    assert_eq!(sol.crashing_index, 1.0);
    assert_eq!((sol.n_av, sol.n_af), (1, 1));
}

#[test]
fn rotation_about_pinned_axis_is_rejected() {
    let scene = load("diamond_rotate.json");
    let max = ochs_solve(&scene.model, &SolveOptions::with_mode(VelocityDimMode::Maximal)).unwrap_err();
    assert!(
        matches!(max, SolveError::InfeasibleGoal { reason: InfeasibleReason::RankCondition, .. }),
        "{max}"
    );
    let min = ochs_solve(&scene.model, &SolveOptions::default()).unwrap_err();
    assert!(
        matches!(min, SolveError::InfeasibleGoal { reason: InfeasibleReason::RankCondition, .. }),
        "{min}"
    );
}

#[test]
fn lifting_the_center_is_feasible() {
    let scene = load("diamond_lift.json");
    for mode in [VelocityDimMode::Minimal, VelocityDimMode::Maximal] {
        let sol = ochs_solve(&scene.model, &SolveOptions::with_mode(mode)).unwrap();
        let check = check_solution(&scene.model, &sol, RankTol::default()).unwrap();
        assert!(check.passes(), "{mode:?}: {check:?}");
    }
}

#[test]
fn minimal_dimension_matches_rank_gap() {
    let scene = load("diamond_lift.json");
    let tol = RankTol::default();
    let m = &scene.model;
    let gap = linalg::rank(&linalg::vstack(&[m.j(), m.g()]), tol).unwrap() - linalg::rank(m.j(), tol).unwrap();
    let sol = ochs_solve(m, &SolveOptions::default()).unwrap();
    assert_eq!(sol.n_av, gap);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn index_ignores_rotations_within_c(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 2 + (seed % 7) as usize;
        let rj = (seed / 7 % n as u64) as usize;
        let nc = 1 + (seed / 49 % (n - rj) as u64) as usize;
        let j = common::gaussian_mat(&mut rng, rj, n);
        let c = linalg::orthonormalize_rows(&common::gaussian_mat(&mut rng, nc, n));
        let q = linalg::orthonormalize_rows(&common::gaussian_mat(&mut rng, nc, nc));
        let tol = RankTol::default();
        let a = crashing_index(&j, &c, tol).unwrap();
        let b = crashing_index(&j, &(q * &c), tol).unwrap();
        prop_assert!((a - b).abs() <= 1e-8 * a.max(1.0), "{a} vs {b}");
    }
}
