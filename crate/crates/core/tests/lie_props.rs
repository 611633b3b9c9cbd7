mod common;

use approx::assert_relative_eq;
use iiekf::lie::{self, GenericGroup, GroupKind, LieError, NEAR_PI};
use nalgebra::{DMatrix, DVector, Vector3};
use proptest::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;

fn kinds() -> impl Strategy<Value = GroupKind> {
    prop_oneof![Just(GroupKind::So3), Just(GroupKind::Se3), Just(GroupKind::Se23)]
}

/// Tangent vector of `kind` with rotation norm below `max_rot`.
fn tangent_for(kind: GroupKind, max_rot: f64) -> impl Strategy<Value = (GroupKind, DVector<f64>)> {
    let n = kind.dim();
    (
        prop::collection::vec(-1.0f64..1.0, 3),
        0.0..max_rot,
        prop::collection::vec(-5.0f64..5.0, n - 3),
    )
        .prop_map(move |(dir, r, rest)| {
            let d = Vector3::new(dir[0], dir[1], dir[2]);
            let rot = if d.norm() > 1e-9 { d.normalize() * r } else { Vector3::zeros() };
            let xi = DVector::from_iterator(n, rot.iter().copied().chain(rest));
            (kind.clone(), xi)
        })
}

fn any_tangent(max_rot: f64) -> impl Strategy<Value = (GroupKind, DVector<f64>)> {
    kinds().prop_flat_map(move |k| tangent_for(k, max_rot))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn log_inverts_exp((kind, xi) in any_tangent(3.0)) {
        let back = kind.log(&kind.exp(&xi).unwrap()).unwrap();
        prop_assert!((back - &xi).norm() <= 1e-9);
    }

    #[test]
    fn exp_lands_in_group((kind, xi) in any_tangent(3.1)) {
        let g = kind.exp(&xi).unwrap();
        prop_assert!(kind.element(g.matrix().clone()).is_ok());
    }

    #[test]
    fn closed_form_exp_matches_series((kind, xi) in any_tangent(2.0)) {
        let series = lie::expm(&kind.hat(&xi).unwrap());
        let closed = kind.exp(&xi).unwrap();
        prop_assert!((closed.matrix() - series).norm() <= 1e-10 * (1.0 + xi.norm()));
    }

    #[test]
    fn closed_form_jacobian_matches_series((kind, xi) in any_tangent(2.0)) {
        let closed = kind.right_jacobian(&xi).unwrap();
        let series = kind.right_jacobian_series(&xi).unwrap();
        prop_assert!((closed - series).norm() <= 1e-10 * (1.0 + xi.norm()));
    }

    #[test]
    fn left_jacobian_is_right_jacobian_of_negation((kind, xi) in any_tangent(3.0)) {
        let jl = kind.left_jacobian(&xi).unwrap();
        let jr = kind.right_jacobian(&(-&xi)).unwrap();
        prop_assert_eq!(jl, jr);
    }

    #[test]
    fn composition_is_associative(
        (kind, a) in any_tangent(3.0),
        b in prop::collection::vec(-1.0f64..1.0, 9),
        c in prop::collection::vec(-1.0f64..1.0, 9),
    ) {
        let n = kind.dim();
        let x = kind.exp(&a).unwrap();
        let y = kind.exp(&DVector::from_row_slice(&b[..n])).unwrap();
        let z = kind.exp(&DVector::from_row_slice(&c[..n])).unwrap();
        let lhs = x.compose(&y).compose(&z);
        let rhs = x.compose(&y.compose(&z));
        prop_assert!((lhs.matrix() - rhs.matrix()).norm() <= 1e-12 * (1.0 + lhs.matrix().norm()));
    }

    #[test]
    fn inverse_composes_to_identity((kind, xi) in any_tangent(3.0)) {
        let x = kind.exp(&xi).unwrap();
        let e = x.compose(&x.inverse());
        prop_assert!((e.matrix() - kind.identity().matrix()).norm() <= 1e-12 * (1.0 + x.matrix().norm().powi(2)));
    }

    #[test]
    fn vee_inverts_hat((kind, xi) in any_tangent(3.0)) {
        prop_assert_eq!(kind.vee(&kind.hat(&xi).unwrap()).unwrap(), xi);
    }

    #[test]
    fn right_jacobian_defining_relation((kind, xi) in any_tangent(2.5), dir in prop::collection::vec(-1.0f64..1.0, 9)) {
        let n = kind.dim();
        let d = DVector::from_row_slice(&dir[..n]);
        prop_assume!(d.norm() > 0.1);
        let jr = kind.right_jacobian(&xi).unwrap();
        let x_inv = kind.exp(&xi).unwrap().inverse();
        let err = |h: f64| {
            let lhs = kind.log(&x_inv.compose(&kind.exp(&(&xi + &d * h)).unwrap())).unwrap();
            (lhs - &jr * &d * h).norm()
        };
        let order = common::observed_order(err, 1e-2);
        prop_assert!(order >= 1.9 || err(1e-2) < 1e-11, "order {}", order);
    }
}

#[test]
fn exp_quarter_turn() {
    let r = GroupKind::So3.exp(&common::v(&[0.0, 0.0, PI / 2.0])).unwrap();
    let expected = DMatrix::from_row_slice(3, 3, &[0., -1., 0., 1., 0., 0., 0., 0., 1.]);
    assert_relative_eq!(r.matrix().clone(), expected, epsilon = 1e-15);
}

#[test]
fn log_near_pi_is_an_error() {
    let theta = PI - 1e-8;
    let r = GroupKind::So3.exp(&common::v(&[theta, 0.0, 0.0])).unwrap();
    assert!(matches!(GroupKind::So3.log(&r), Err(LieError::AngleNearPi { .. })));
    let ok = GroupKind::So3.exp(&common::v(&[PI - 10.0 * NEAR_PI, 0.0, 0.0])).unwrap();
    assert!(GroupKind::So3.log(&ok).is_ok());
}

#[test]
fn hat_rejects_wrong_dimension() {
    assert!(matches!(
        GroupKind::Se23.hat(&DVector::zeros(6)),
        Err(LieError::DimensionMismatch { expected: 9, got: 6 })
    ));
}

#[test]
fn generic_group_matches_se3() {
    let mut basis = Vec::new();
    for i in 0..6 {
        let e = DVector::from_fn(6, |j, _| if i == j { 1.0 } else { 0.0 });
        basis.push(GroupKind::Se3.hat(&e).unwrap());
    }
    let generic = GroupKind::Generic(Arc::new(GenericGroup::new(basis).unwrap()));
    let xi = common::v(&[0.3, -0.7, 1.1, 2.0, -1.0, 0.5]);
    let a = generic.exp(&xi).unwrap();
    let b = GroupKind::Se3.exp(&xi).unwrap();
    assert_relative_eq!(a.matrix().clone(), b.matrix().clone(), epsilon = 1e-12);
    assert_relative_eq!(generic.log(&a).unwrap(), xi.clone(), epsilon = 1e-9);
    assert_relative_eq!(
        generic.right_jacobian(&xi).unwrap(),
        GroupKind::Se3.right_jacobian(&xi).unwrap(),
        epsilon = 1e-10
    );
}

#[test]
fn small_angle_branches_agree_with_series_at_threshold() {
    for t in [0.5 * lie::SMALL_ANGLE, 2.0 * lie::SMALL_ANGLE, 0.05, 0.099, 0.101] {
        let xi = common::v(&[t, -0.5 * t, 0.25 * t, 1.0, -2.0, 0.5, 3.0, 0.0, -1.0]);
        let closed = GroupKind::Se23.right_jacobian(&xi).unwrap();
        let series = GroupKind::Se23.right_jacobian_series(&xi).unwrap();
        assert_relative_eq!(closed, series, epsilon = 1e-13);
    }
}
