mod common;

use common::{enumerate_qp, random_qp, relative_gap};
use hfvc::qp::{qp_solve, QpLimits, QpStatus};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn enumerator_agrees_on_textbook_cases() {
    use hfvc::linalg::{Mat, Vector};
    use hfvc::qp::QpProblem;
    let p = QpProblem::new(
        Mat::identity(1, 1) * 2.0,
        Vector::zeros(1),
        Mat::zeros(0, 1),
        Vector::zeros(0),
        Mat::from_row_slice(1, 1, &[-1.0]),
        Vector::from_row_slice(&[-1.0]),
    )
    .unwrap();
    let (x, f) = enumerate_qp(&p).unwrap();
    assert!((x[0] - 1.0).abs() < 1e-12 && (f - 1.0).abs() < 1e-12);

    let p = QpProblem::new(
        Mat::identity(1, 1) * 2.0,
        Vector::zeros(1),
        Mat::from_row_slice(1, 1, &[1.0]),
        Vector::from_row_slice(&[1.0]),
        Mat::from_row_slice(1, 1, &[1.0]),
        Vector::from_row_slice(&[0.0]),
    )
    .unwrap();
    assert!(enumerate_qp(&p).is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn matches_exhaustive_active_sets(seed in any::<u64>(), feasible in prop::bool::weighted(0.8)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_qp(&mut rng, feasible);
        let sol = qp_solve(&p, QpLimits::default());
        match enumerate_qp(&p) {
            Some((_, f)) => {
                prop_assert_eq!(sol.status, QpStatus::Optimal);
                prop_assert!(relative_gap(sol.objective, f) <= 1e-6, "{} vs {}", sol.objective, f);
                prop_assert!(sol.kkt(&p).within(1e-6), "{:?}", sol.kkt(&p));
            }
            None => {
                prop_assert_eq!(sol.status, QpStatus::Infeasible);
                prop_assert!(sol.infeasibility_bound.unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn dropping_an_inequality_never_raises_the_optimum(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_qp(&mut rng, true);
        prop_assume!(p.a_in().nrows() > 0);
        let full = qp_solve(&p, QpLimits::default());
        prop_assert_eq!(full.status, QpStatus::Optimal);
        for row in 0..p.a_in().nrows() {
            let relaxed = qp_solve(&p.without_inequality(row), QpLimits::default());
            prop_assert_eq!(relaxed.status, QpStatus::Optimal);
            prop_assert!(relaxed.objective <= full.objective + 1e-9 * (1.0 + full.objective.abs()));
        }
    }

    #[test]
    fn optimum_equals_lagrangian(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_qp(&mut rng, true);
        let sol = qp_solve(&p, QpLimits::default());
        prop_assert_eq!(sol.status, QpStatus::Optimal);
        let l = p.lagrangian(&sol.x, &sol.eq_multipliers, &sol.in_multipliers);
        prop_assert!(relative_gap(l, sol.objective) <= 1e-6);
    }
}
