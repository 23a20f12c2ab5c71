use std::f64::consts::PI;

use hfvc::linalg::{self, RankTol};
use hfvc::ochs::SolveOptions;
use hfvc::tilt::{run_tilt, tilt_model, TiltParams, TiltStep};
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;

/// Largest violation of `mu n >= d_i . t` and `n >= n_min` with
/// `d_i = [sin(pi i/4), cos(pi i/4), 0]`, local force `frame^T lambda`.
fn cone_violation(frame: &Matrix3<f64>, lambda: Vector3<f64>, mu: f64, n_min: f64) -> f64 {
    let local = frame.transpose() * lambda;
    let mut worst = n_min - local.z;
    for i in 1..=8 {
        let a = PI * i as f64 / 4.0;
        worst = worst.max(a.sin() * local.x + a.cos() * local.y - mu * local.z);
    }
    worst
}

fn guard_violation(p: &TiltParams, step: &TiltStep) -> f64 {
    let l = &step.solution.lambda;
    let r = step.state.rotation();
    let hand_frame = r * Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
    let pick = |k: usize| Vector3::new(l[3 * k], l[3 * k + 1], l[3 * k + 2]);
    cone_violation(&hand_frame, pick(0), p.mu_hand, p.n_min)
        .max(cone_violation(&Matrix3::identity(), pick(1), p.mu_table, p.n_min))
        .max(cone_violation(&Matrix3::identity(), pick(2), p.mu_table, p.n_min))
}

#[test]
fn default_tilt_keeps_one_velocity_and_two_force_directions() {
    let p = TiltParams::default();
    let steps = run_tilt(&p, &SolveOptions::default()).unwrap();
    assert_eq!(steps.len(), 50);
    assert!((steps.last().unwrap().theta - PI / 4.0).abs() < 1e-15);
    for s in &steps {
        assert_eq!((s.solution.n_av, s.solution.n_af), (1, 2), "step {}", s.step);
        assert!(s.force_y_fraction() <= 0.05, "step {}: {}", s.step, s.force_y_fraction());
        assert!(guard_violation(&p, s) <= 1e-9, "step {}: {}", s.step, guard_violation(&p, s));
        assert!((s.state.q_o.norm() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn velocity_command_scales_with_rate() {
    let p = TiltParams {
        steps: 10,
        ..TiltParams::default()
    };
    let fast = TiltParams {
        rate: p.rate * 1.5,
        ..p.clone()
    };
    let opts = SolveOptions::default();
    for (a, b) in run_tilt(&p, &opts).unwrap().iter().zip(run_tilt(&fast, &opts).unwrap().iter()) {
        assert_eq!(a.solution.c, b.solution.c);
        let expected = &a.solution.w_av * 1.5;
        assert!((&b.solution.w_av - &expected).amax() <= 1e-14 * expected.amax().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn admissible_motions_keep_contacts_still(theta in 0.0..1.2f64, weights in prop::collection::vec(-1.0..1.0f64, 9)) {
        let p = TiltParams::default();
        let s = p.state_at(theta);
        let m = tilt_model(&p, &s, RankTol::default()).unwrap();
        let null = linalg::null_rows(m.j(), RankTol::default()).unwrap();
        let mut v = linalg::Vector::zeros(9);
        for (k, row) in null.row_iter().enumerate() {
            v += row.transpose() * weights[k];
        }
        let r = s.rotation();
        let v_b = Vector3::new(v[0], v[1], v[2]);
        let w_b = Vector3::new(v[3], v[4], v[5]);
        let v_h = Vector3::new(v[6], v[7], v[8]);
        let point_velocity = |x_obj: Vector3<f64>| r * (v_b + w_b.cross(&x_obj));
        let hand = Vector3::from(p.hand_contact);
        prop_assert!((point_velocity(hand) - v_h).norm() < 1e-8);
        for t in p.table_contacts_object() {
            prop_assert!(point_velocity(t).norm() < 1e-8);
        }
    }
}
