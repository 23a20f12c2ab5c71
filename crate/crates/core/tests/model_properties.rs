use hfvc::linalg::{self, RankTol, Vector};
use hfvc::model::{
    assemble_jacobians, build_guards, layout_bodies, Body, BodyKind, ContactMode, ContactPoint,
};
use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;

fn v3(x: Vector3<f64>) -> Vector {
    Vector::from_row_slice(x.as_slice())
}

fn unit3() -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-1.0..1.0f64)
        .prop_filter("non-degenerate", |a| Vector3::from(*a).norm() > 0.2)
        .prop_map(|a| Vector3::from(a).normalize())
}

fn point3() -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-1.0..1.0f64).prop_map(Vector3::from)
}

fn bodies() -> Vec<Body> {
    vec![
        Body {
            name: "object".into(),
            kind: BodyKind::Spatial,
            actuated: false,
            origin: Vector::from_row_slice(&[0.1, -0.2, 0.3]),
        },
        Body {
            name: "ground".into(),
            kind: BodyKind::Environment,
            actuated: false,
            origin: Vector::zeros(3),
        },
        Body {
            name: "finger".into(),
            kind: BodyKind::Spatial,
            actuated: true,
            origin: Vector::from_row_slice(&[-0.4, 0.0, 0.2]),
        },
    ]
}

/// World velocity of a material point from a body's `[v; w]` slice.
fn material_velocity(v: &Vector, offset: Option<usize>, origin: &Vector, p: Vector3<f64>) -> Vector3<f64> {
    let Some(o) = offset else {
        return Vector3::zeros();
    };
    let lin = Vector3::new(v[o], v[o + 1], v[o + 2]);
    let ang = Vector3::new(v[o + 3], v[o + 4], v[o + 5]);
    let r = p - Vector3::new(origin[0], origin[1], origin[2]);
    lin + ang.cross(&r)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn constrained_motions_keep_sticking_contacts_together(
        pts in prop::collection::vec((point3(), unit3(), 0usize..2), 1..4),
        coeffs in prop::collection::vec(-1.0..1.0f64, 12),
    ) {
        let bodies = bodies();
        let (dof, slots) = layout_bodies(3, &bodies).unwrap();
        let contacts: Vec<ContactPoint> = pts
            .iter()
            .map(|(p, n, other)| {
                let pair = if *other == 0 { (0, 1) } else { (0, 2) };
                ContactPoint::new(v3(*p), v3(*n), None, ContactMode::Sticking, 0.5, pair).unwrap()
            })
            .collect();
        let jac = assemble_jacobians(3, dof.n(), &slots, &contacts).unwrap();
        let null = linalg::null_rows(&jac.j, RankTol::default()).unwrap();
        prop_assume!(null.nrows() > 0);
        let mut v = Vector::zeros(dof.n());
        for (i, row) in null.row_iter().enumerate() {
            v += row.transpose() * coeffs[i % coeffs.len()];
        }
        for c in &contacts {
            let p = Vector3::new(c.position[0], c.position[1], c.position[2]);
            let (a, b) = (&slots[c.body_a], &slots[c.body_b]);
            let rel = material_velocity(&v, a.offset, &a.body.origin, p)
                - material_velocity(&v, b.offset, &b.body.origin, p);
            prop_assert!(rel.norm() < 1e-8, "relative velocity {rel}");
        }
    }

    #[test]
    fn guards_are_rotation_equivariant(
        pts in prop::collection::vec((point3(), unit3(), unit3()), 1..4),
        forces in prop::collection::vec(point3(), 3),
        axis in unit3(),
        angle in -3.0..3.0f64,
        mu in 0.0..1.2f64,
    ) {
        prop_assume!(pts.iter().all(|(_, n, h)| n.cross(h).norm() > 0.1));
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        let build = |r: &Rotation3<f64>| {
            let contacts: Vec<ContactPoint> = pts
                .iter()
                .map(|(p, n, hint)| {
                    ContactPoint::new(v3(r * p), v3(r * n), Some(v3(r * hint)), ContactMode::Sticking, mu, (0, 1))
                        .unwrap()
                })
                .collect();
            let specs: Vec<_> = contacts.iter().enumerate().map(|(k, c)| c.guard_spec(3 * k)).collect();
            build_guards(&specs, 3 * contacts.len(), 0.5, 8).unwrap()
        };
        let base = build(&Rotation3::identity());
        let turned = build(&rot);
        let mut lam = Vector::zeros(3 * pts.len());
        let mut lam_rot = lam.clone();
        for k in 0..pts.len() {
            let f = forces[k % forces.len()];
            lam.rows_mut(3 * k, 3).copy_from(&v3(f));
            lam_rot.rows_mut(3 * k, 3).copy_from(&v3(rot * f));
        }
        let s0: Vector = &base.lambda * &lam - &base.b;
        let s1: Vector = &turned.lambda * &lam_rot - &turned.b;
        prop_assert!((s0 - s1).amax() < 1e-10);
    }
}
