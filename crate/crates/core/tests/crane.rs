mod common;

use iiekf::belief::factor;
use iiekf::crane::{
    ekf_output_jacobian, imu_from_truth, imu_propagate, invariant_d, invariant_measurement, jacobians_ekf,
    jacobians_iekf, lever, measure, numeric_rank, observability_matrix, simulate_truth, synthesize_imu,
    CableProfile, ExtendedPose, ImuSample, ScenarioConfig,
};
use iiekf::filters::ErrorState;
use iiekf::lie::{so3_exp, GroupKind};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn g() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -9.81)
}

fn constant_length(id: u8, l: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::scenario(id).unwrap();
    cfg.cable_profile = CableProfile::constant(l);
    cfg
}

fn random_pose<R: Rng>(r: &mut R) -> ExtendedPose {
    ExtendedPose::from_group(&common::random_element(r, &GroupKind::Se23))
}

fn random_sample<R: Rng>(r: &mut R, dt: f64) -> ImuSample {
    ImuSample {
        omega: Vector3::from_iterator(common::gaussian(r, 3).iter().copied()),
        accel: Vector3::from_iterator((common::gaussian(r, 3) * 5.0).iter().copied()),
        dt,
    }
}

// ---------------------------------------------------------------------------
// Truth simulation

#[test]
fn planar_energy_is_conserved_for_constant_length() {
    let mut cfg = constant_length(2, 10.0);
    cfg.initial.theta = std::f64::consts::FRAC_PI_4;
    let truth = simulate_truth(&cfg).unwrap();
    let e0 = truth.pendulum[0].energy(10.0, 9.81);
    for s in &truth.pendulum {
        let rel = (s.energy(10.0, 9.81) - e0).abs() / e0.abs();
        assert!(rel <= 1e-6, "relative energy drift {rel}");
    }
}

#[test]
fn spherical_energy_and_vertical_momentum_are_conserved() {
    let cfg = constant_length(1, 10.0);
    let truth = simulate_truth(&cfg).unwrap();
    let e0 = truth.pendulum[0].energy(10.0, 9.81);
    let m0 = truth.pendulum[0].vertical_momentum(10.0);
    for s in &truth.pendulum {
        assert!((s.energy(10.0, 9.81) - e0).abs() <= 1e-6 * e0.abs());
        assert!((s.vertical_momentum(10.0) - m0).abs() <= 1e-6 * m0.abs());
    }
}

#[test]
fn planar_motion_stays_planar() {
    let truth = simulate_truth(&ScenarioConfig::scenario(2).unwrap()).unwrap();
    assert!(truth.pendulum.iter().all(|s| s.phi == 0.0));
    assert!(truth.poses.iter().all(|p| p.p[1] == 0.0 && p.v[1] == 0.0));
}

#[test]
fn truth_measurement_closes_on_the_hang_point() {
    let cfg = ScenarioConfig::scenario(1).unwrap();
    let truth = simulate_truth(&cfg).unwrap();
    let zero = factor(&DMatrix::zeros(3, 3)).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(0);
    for (pose, &l) in truth.poses.iter().zip(&truth.lengths) {
        let y = measure(pose, l, &zero, &mut r);
        assert!(y.norm() <= 1e-9, "{y:?}");
    }
}

#[test]
fn cable_lengths_follow_the_profile() {
    let cfg = ScenarioConfig::scenario(1).unwrap();
    assert_eq!(cfg.cable_length(0), 10.0);
    assert_eq!(cfg.cable_length(cfg.steps()), 5.0);
    let samples: Vec<f64> = (0..=cfg.steps()).map(|k| cfg.cable_length(k)).collect();
    assert!(samples.windows(2).all(|w| w[1] <= w[0]));
    let c = constant_length(1, 7.0);
    assert!((0..=c.steps()).all(|k| c.cable_length(k) == 7.0));
}

// ---------------------------------------------------------------------------
// IMU model

#[test]
fn zero_noise_imu_reproduces_truth() {
    for id in 1..=3 {
        let cfg = ScenarioConfig::scenario(id).unwrap();
        let truth = simulate_truth(&cfg).unwrap();
        let samples = imu_from_truth(&truth.poses, truth.dt, &g());
        for (k, s) in samples.iter().enumerate() {
            let next = imu_propagate(&truth.poses[k], s, &Vector6::zeros(), &g());
            let want = &truth.poses[k + 1];
            assert!((next.r - want.r).norm() <= 1e-10);
            assert!((next.v - want.v).norm() <= 1e-10);
            assert!((next.p - want.p).norm() <= 1e-10);
        }
    }
}

#[test]
fn stationary_truth_gives_gravity_reaction() {
    let r = so3_exp(&Vector3::new(0.1, 0.2, -0.3));
    let pose = ExtendedPose::new(r, Vector3::zeros(), Vector3::new(1.0, 2.0, 3.0));
    let samples = imu_from_truth(&[pose.clone(), pose], 0.01, &g());
    assert!(samples[0].omega.norm() <= 1e-15);
    assert!((samples[0].accel + r.transpose() * g()).norm() <= 1e-12);
}

#[test]
fn free_fall_euler_error_is_first_order() {
    let v0 = Vector3::new(1.0, -2.0, 3.0);
    let p0 = Vector3::new(0.5, 0.0, 10.0);
    let t_end = 10.0;
    let err = |dt: f64| {
        let n = (t_end / dt).round() as usize;
        let mut pose = ExtendedPose::new(Matrix3::identity(), v0, p0);
        let s = ImuSample {
            omega: Vector3::zeros(),
            accel: Vector3::zeros(),
            dt,
        };
        for _ in 0..n {
            pose = imu_propagate(&pose, &s, &Vector6::zeros(), &g());
        }
        let exact = p0 + v0 * t_end + g() * (0.5 * t_end * t_end);
        (pose.p - exact).norm()
    };
    assert!(err(0.01) > 0.0);
    let order = common::observed_order(err, 0.01);
    assert!((order - 1.0).abs() < 0.05, "order {order}");
}

#[test]
fn imu_noise_matches_q() {
    let cfg = ScenarioConfig::scenario(1).unwrap();
    let lq = factor(&cfg.q).unwrap();
    let pose = ExtendedPose::new(Matrix3::identity(), Vector3::zeros(), Vector3::zeros());
    let poses = vec![pose; 10_001];
    let mut r = ChaCha8Rng::seed_from_u64(42);
    let noisy = synthesize_imu(&poses, 0.01, &g(), &lq, &mut r);
    let clean = imu_from_truth(&poses, 0.01, &g());
    for i in 0..6 {
        let dev: Vec<f64> = noisy
            .iter()
            .zip(&clean)
            .map(|(a, b)| if i < 3 { a.omega[i] - b.omega[i] } else { a.accel[i - 3] - b.accel[i - 3] })
            .collect();
        let var = dev.iter().map(|x| x * x).sum::<f64>() / dev.len() as f64;
        let want = cfg.q[(i, i)].sqrt();
        assert!((var.sqrt() - want).abs() <= 0.05 * want, "axis {i}: {} vs {want}", var.sqrt());
    }
}

#[test]
fn measurement_examples() {
    let pose = ExtendedPose::new(Matrix3::identity(), Vector3::zeros(), Vector3::zeros());
    let zero = factor(&DMatrix::zeros(3, 3)).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(measure(&pose, 2.0, &zero, &mut r), Vector3::new(0.0, 0.0, 2.0));
    let m = invariant_measurement(&Vector3::new(1.0, 2.0, 3.0), 2.0, &DMatrix::identity(3, 3));
    assert_eq!(m.y.as_slice(), &[1.0, 2.0, 3.0, 0.0, 1.0]);
    assert_eq!(m.d, invariant_d(2.0));
}

// ---------------------------------------------------------------------------
// Jacobians

#[test]
fn iekf_jacobian_blocks_without_rotation() {
    let s = ImuSample {
        omega: Vector3::zeros(),
        accel: Vector3::new(1.0, -2.0, 0.5),
        dt: 0.01,
    };
    let (f, _, h) = jacobians_iekf(&s, 3.0);
    let i3 = DMatrix::<f64>::identity(3, 3);
    for b in 0..3 {
        assert_eq!(f.view((3 * b, 3 * b), (3, 3)), i3);
    }
    let skew_a = iiekf::lie::to_dyn(&iiekf::lie::skew(&s.accel));
    assert!((f.view((3, 0), (3, 3)) + skew_a * 0.01).norm() < 1e-15);
    assert_eq!(f.view((6, 3), (3, 3)), i3.clone() * 0.01);
    let want_h = iiekf::filters::invariant_measurement_jacobian(&GroupKind::Se23, &invariant_d(3.0)).unwrap();
    assert_eq!(h, want_h);
}

/// Zero-noise propagation of the left-invariant error is exactly linear.
#[test]
fn iekf_error_propagation_matches_f() {
    let kind = GroupKind::Se23;
    let mut r = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let est = random_pose(&mut r);
        let s = random_sample(&mut r, 0.01);
        let (f, _, _) = jacobians_iekf(&s, 1.0);
        let step = |x: &ExtendedPose| imu_propagate(x, &s, &Vector6::zeros(), &g());
        let est_next = step(&est).to_group();
        let prop = |xi: &DVector<f64>| {
            let truth = est.to_group().retract(xi).unwrap();
            let next = step(&ExtendedPose::from_group(&truth)).to_group();
            kind.log(&est_next.inverse().compose(&next)).unwrap()
        };
        for j in 0..9 {
            let e = DVector::from_fn(9, |i, _| if i == j { 1e-6 } else { 0.0 });
            let col = prop(&e) / 1e-6;
            assert!((col - f.column(j)).norm() <= 1e-5);
        }
        let xi = common::tangent(&mut r, 9, 1.0);
        let err = |h: f64| (prop(&(&xi * h)) - &f * &xi * h).norm();
        let order = common::observed_order(err, 0.1);
        assert!(err(0.1) <= 1e-12 || order >= 1.9, "residual {} order {order}", err(0.1));
    }
}

#[test]
fn ekf_jacobians_match_finite_differences() {
    let mut r = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let est = random_pose(&mut r);
        let s = random_sample(&mut r, 0.01);
        let l = 4.0;
        let (f, _, h) = jacobians_ekf(&est, &s, l);
        assert_eq!(h, ekf_output_jacobian(&est, l));
        let y = |x: &ExtendedPose| x.r * lever(l) + x.p;
        let step = |x: &ExtendedPose| imu_propagate(x, &s, &Vector6::zeros(), &g());
        let est_next = step(&est);
        let mixed_error = |a: &ExtendedPose, b: &ExtendedPose| {
            let rot = iiekf::lie::so3_log(&(a.r.transpose() * b.r)).unwrap();
            DVector::from_iterator(9, rot.iter().chain((b.v - a.v).iter()).chain((b.p - a.p).iter()).copied())
        };
        let eps = 1e-6;
        for j in 0..9 {
            let e = DVector::from_fn(9, |i, _| if i == j { eps } else { 0.0 });
            let plus = est.retract(&e);
            let minus = est.retract(&(-&e));
            let dy = (y(&plus) - y(&minus)) / (2.0 * eps);
            assert!((DVector::from_column_slice(dy.as_slice()) - h.column(j)).norm() <= 1e-6);
            let df = (mixed_error(&est_next, &step(&plus)) - mixed_error(&est_next, &step(&minus))) / (2.0 * eps);
            assert!((df - f.column(j)).norm() <= 1e-5, "column {j}");
        }
    }
}

// ---------------------------------------------------------------------------
// Observability

fn scenario_inputs(id: u8) -> (Vec<ImuSample>, Vec<f64>, f64) {
    let cfg = ScenarioConfig::scenario(id).unwrap();
    let truth = simulate_truth(&cfg).unwrap();
    (imu_from_truth(&truth.poses, truth.dt, &g()), truth.lengths, truth.dt)
}

#[test]
fn scenario_one_observability_rank_is_eight() {
    let (imu, lengths, dt) = scenario_inputs(1);
    for k in (2..imu.len()).step_by(imu.len() / 10).take(10) {
        let rep = observability_matrix(
            &[imu[k - 2], imu[k - 1]],
            &[lever(lengths[k - 2]), lever(lengths[k - 1]), lever(lengths[k])],
            dt,
        );
        assert_eq!(rep.rank, 8, "step {k}");
        assert!(rep.reduced_rank == 2 || rep.reduced_rank == 0);
    }
}

#[test]
fn reduced_block_vanishes_without_motion() {
    let s = ImuSample {
        omega: Vector3::zeros(),
        accel: Vector3::zeros(),
        dt: 0.01,
    };
    let r = lever(5.0);
    let rep = observability_matrix(&[s, s], &[r, r, r], 0.01);
    assert_eq!(rep.reduced_rank, 0);
    assert!(rep.rank < 9);
}

#[test]
fn planar_reduced_problem_is_observable() {
    let (imu, lengths, dt) = scenario_inputs(2);
    let keep = [1usize, 3, 5, 6, 8];
    for k in (2..imu.len()).step_by(imu.len() / 10).take(10) {
        let rep = observability_matrix(
            &[imu[k - 2], imu[k - 1]],
            &[lever(lengths[k - 2]), lever(lengths[k - 1]), lever(lengths[k])],
            dt,
        );
        let cols = rep.o.select_columns(keep.iter());
        assert_eq!(numeric_rank(&cols, 1e-9), keep.len(), "step {k}");
    }
}

#[test]
fn config_overrides_and_validation() {
    let cfg = ScenarioConfig::scenario(1).unwrap();
    let over = cfg.with_overrides("n_sims = 7\n[initial]\ntheta = 0.5\n").unwrap();
    assert_eq!(over.n_sims, 7);
    assert_eq!(over.initial.theta, 0.5);
    assert_eq!(over.initial.phi_dot, cfg.initial.phi_dot);
    assert!(cfg.with_overrides("unknown_key = 1").is_err());
    let mut bad = cfg.clone();
    bad.rate = 0.0;
    assert!(bad.validate().is_err());
    assert!(ScenarioConfig::scenario(4).is_err());
    let back = ScenarioConfig::scenario(3)
        .unwrap()
        .with_overrides(&ScenarioConfig::scenario(3).unwrap().to_toml())
        .unwrap();
    assert_eq!(back, ScenarioConfig::scenario(3).unwrap());
}
