//! Crane-hook benchmark: a spherical pendulum with a time-varying cable
//! carrying an IMU, observed through the position of the cable's hang point.
//!
//! The hook state is an extended pose `(R, v, p)` with `R` mapping the body
//! frame to the world frame. The body z-axis points from the hook towards
//! the hang point, so the hang point is at `R r + p` with `r = (0, 0, l)`.
//!
//! Truth generation integrates the pendulum in `(θ, φ)` (polar and azimuth
//! angles of the hook about the hang point) with RK4. The truth velocity is
//! the forward difference of positions, which makes the IMU model of
//! [`imu_propagate`] reproduce the truth exactly from [`imu_from_truth`].

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};
use rand::Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::belief::{self, CovFactor, GainMode};
use crate::filters::{ErrorState, InvariantMeasurement, MeasurementModel, ProcessModel};
use crate::lie::{self, skew, so3_exp, so3_left_jacobian, GroupElement, GroupKind};

/// Standard gravity, world frame, z up.
pub const GRAVITY: [f64; 3] = [0.0, 0.0, -9.81];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CraneError {
    #[error("pendulum integration diverged at t = {t:.4} s")]
    IntegrationDiverged { t: f64 },
    #[error("invalid scenario configuration: {0}")]
    Config(String),
}

// ---------------------------------------------------------------------------
// States

#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedPose {
    pub r: Matrix3<f64>,
    pub v: Vector3<f64>,
    pub p: Vector3<f64>,
}

impl ExtendedPose {
    pub fn new(r: Matrix3<f64>, v: Vector3<f64>, p: Vector3<f64>) -> Self {
        Self { r, v, p }
    }

    pub fn to_group(&self) -> GroupElement {
        let mut m = DMatrix::identity(5, 5);
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.v);
        m.fixed_view_mut::<3, 1>(0, 4).copy_from(&self.p);
        GroupElement::new(GroupKind::Se23, m).expect("extended pose is in SE2(3)")
    }

    /// Reads the blocks of an SE2(3) element; the kind is not checked.
    pub fn from_group(g: &GroupElement) -> Self {
        let m = g.matrix();
        Self {
            r: m.fixed_view::<3, 3>(0, 0).into_owned(),
            v: m.fixed_view::<3, 1>(0, 3).into_owned(),
            p: m.fixed_view::<3, 1>(0, 4).into_owned(),
        }
    }

    fn is_finite(&self) -> bool {
        self.r.iter().chain(self.v.iter()).chain(self.p.iter()).all(|x| x.is_finite())
    }
}

/// EKF error coordinates `(log(R̂ᵀR), v − v̂, p − p̂)`.
impl ErrorState for ExtendedPose {
    fn retract(&self, delta: &DVector<f64>) -> Self {
        let phi = Vector3::new(delta[0], delta[1], delta[2]);
        Self {
            r: self.r * so3_exp(&phi),
            v: self.v + delta.fixed_rows::<3>(3),
            p: self.p + delta.fixed_rows::<3>(6),
        }
    }

    fn retraction_jacobian(&self, delta: &DVector<f64>) -> DMatrix<f64> {
        let phi = Vector3::new(delta[0], delta[1], delta[2]);
        let mut j = DMatrix::identity(9, 9);
        j.fixed_view_mut::<3, 3>(0, 0).copy_from(&lie::so3_right_jacobian(&phi));
        j
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub omega: Vector3<f64>,
    pub accel: Vector3<f64>,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumState {
    pub phi: f64,
    pub theta: f64,
    pub phi_dot: f64,
    pub theta_dot: f64,
    pub hang_point: Vector3<f64>,
}

impl PendulumState {
    /// Unit vector from the hang point to the hook.
    pub fn direction(&self) -> Vector3<f64> {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        Vector3::new(st * cp, st * sp, -ct)
    }

    pub fn position(&self, l: f64) -> Vector3<f64> {
        self.hang_point + self.direction() * l
    }

    /// Body-to-world rotation `Rz(φ) Ry(−θ)`; its third column is the
    /// direction from the hook to the hang point.
    pub fn attitude(&self) -> Matrix3<f64> {
        so3_exp(&Vector3::new(0.0, 0.0, self.phi)) * so3_exp(&Vector3::new(0.0, -self.theta, 0.0))
    }

    /// Kinetic plus potential energy per unit mass for a cable of length `l`
    /// held fixed.
    pub fn energy(&self, l: f64, g: f64) -> f64 {
        let st = self.theta.sin();
        0.5 * l * l * (self.theta_dot.powi(2) + st * st * self.phi_dot.powi(2)) - g * l * self.theta.cos()
    }

    /// Angular momentum about the vertical axis per unit mass.
    pub fn vertical_momentum(&self, l: f64) -> f64 {
        l * l * self.theta.sin().powi(2) * self.phi_dot
    }
}

// ---------------------------------------------------------------------------
// Configuration

/// Piecewise-linear `(time [s], length [m])` profile, clamped at both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CableProfile(pub Vec<(f64, f64)>);

impl CableProfile {
    pub fn constant(l: f64) -> Self {
        Self(vec![(0.0, l)])
    }

    /// 10 m for the first fifth of the 2.5 s horizon, a linear ramp down to
    /// 5 m ending half a second before the end, then 5 m.
    pub fn default_profile() -> Self {
        Self(vec![(0.0, 10.0), (0.5, 10.0), (2.0, 5.0), (2.5, 5.0)])
    }

    fn segment(&self, t: f64) -> (f64, f64) {
        let pts = &self.0;
        let last = pts[pts.len() - 1];
        if pts.len() == 1 || t <= pts[0].0 {
            return (pts[0].1, 0.0);
        }
        if t >= last.0 {
            return (last.1, 0.0);
        }
        for w in pts.windows(2) {
            let ((t0, l0), (t1, l1)) = (w[0], w[1]);
            if t <= t1 {
                let rate = if t1 > t0 { (l1 - l0) / (t1 - t0) } else { 0.0 };
                return (l0 + rate * (t - t0), rate);
            }
        }
        (last.1, 0.0)
    }

    pub fn length(&self, t: f64) -> f64 {
        self.segment(t).0
    }

    pub fn rate(&self, t: f64) -> f64 {
        self.segment(t).1
    }

    fn validate(&self) -> Result<(), CraneError> {
        if self.0.is_empty() {
            return Err(CraneError::Config("cable profile is empty".into()));
        }
        if self.0.iter().any(|(t, l)| !t.is_finite() || !(*l > 0.0)) {
            return Err(CraneError::Config("cable lengths must be positive".into()));
        }
        if self.0.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(CraneError::Config("cable profile times must be sorted".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumInit {
    pub phi: f64,
    pub theta: f64,
    pub phi_dot: f64,
    pub theta_dot: f64,
    #[serde(default)]
    pub hang_point: [f64; 3],
}

impl PendulumInit {
    pub fn state(&self) -> PendulumState {
        PendulumState {
            phi: self.phi,
            theta: self.theta,
            phi_dot: self.phi_dot,
            theta_dot: self.theta_dot,
            hang_point: Vector3::from(self.hang_point),
        }
    }
}

/// Matrices are written either as a list of rows or, for diagonal matrices,
/// as the list of diagonal entries.
mod matrix_serde {
    use super::*;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Rows(Vec<Vec<f64>>),
        Diagonal(Vec<f64>),
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let off_diagonal = (0..m.nrows()).any(|i| (0..m.ncols()).any(|j| i != j && m[(i, j)] != 0.0));
        if m.is_square() && !off_diagonal {
            m.diagonal().iter().copied().collect::<Vec<_>>().serialize(s)
        } else {
            m.row_iter()
                .map(|r| r.iter().copied().collect::<Vec<_>>())
                .collect::<Vec<_>>()
                .serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Diagonal(diag) => Ok(DMatrix::from_diagonal(&DVector::from_vec(diag))),
            Repr::Rows(rows) => {
                let n = rows.len();
                let m = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != m) {
                    return Err(D::Error::custom("matrix rows have different lengths"));
                }
                Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario_id: u8,
    /// Horizon in seconds.
    pub duration: f64,
    /// IMU and filter rate in Hz.
    pub rate: f64,
    pub gravity: [f64; 3],
    /// Covariance of `(w_ω, w_a)`.
    #[serde(with = "matrix_serde")]
    pub q: DMatrix<f64>,
    /// Covariance of the measurement noise on the hang-point position.
    #[serde(with = "matrix_serde")]
    pub n: DMatrix<f64>,
    /// Initial covariance, ordered (rotation, velocity, position).
    #[serde(with = "matrix_serde")]
    pub p0: DMatrix<f64>,
    pub n_max: usize,
    pub tol: f64,
    /// Gain used by all four filters.
    pub gain_mode: GainMode,
    pub n_sims: usize,
    pub seed: u64,
    pub cable_profile: CableProfile,
    pub initial: PendulumInit,
    /// RK4 sub-steps per filter step.
    pub substeps: usize,
}

fn diag(entries: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_row_slice(entries))
}

impl ScenarioConfig {
    /// Built-in settings for scenario 1, 2 or 3.
    pub fn scenario(id: u8) -> Result<Self, CraneError> {
        let gyro = 0.017f64.powi(2);
        let acc = 0.1f64.powi(2);
        let rot = (PI / 6.0).powi(2);
        let mut cfg = Self {
            scenario_id: id,
            duration: 2.5,
            rate: 100.0,
            gravity: GRAVITY,
            q: diag(&[gyro, gyro, gyro, acc, acc, acc]),
            n: DMatrix::identity(3, 3),
            p0: diag(&[rot, rot, rot, 100.0, 100.0, 100.0, 100.0, 100.0, 100.0]),
            n_max: 50,
            tol: 1e-7,
            gain_mode: GainMode::Standard,
            n_sims: 200,
            seed: 0,
            cable_profile: CableProfile::default_profile(),
            initial: PendulumInit {
                phi: 0.0,
                theta: PI / 4.0,
                phi_dot: 1.0,
                theta_dot: 0.0,
                hang_point: [0.0; 3],
            },
            substeps: 10,
        };
        match id {
            1 => {}
            2 | 3 => {
                // planar motion in the x-z plane: only the y rotation and the
                // x/z translations are uncertain
                cfg.initial.phi_dot = 0.0;
                cfg.q = diag(&[0.0, gyro, 0.0, acc, 0.0, acc]);
                cfg.p0 = diag(&[0.0, rot, 0.0, 100.0, 0.0, 100.0, 100.0, 0.0, 100.0]);
                if id == 3 {
                    cfg.n = DMatrix::zeros(3, 3);
                    cfg.gain_mode = GainMode::Regularized(belief::DEFAULT_DELTA);
                }
            }
            _ => return Err(CraneError::Config(format!("unknown scenario {id}"))),
        }
        Ok(cfg)
    }

    /// Applies a TOML document on top of this configuration. Keys absent from
    /// the document keep their current values.
    pub fn with_overrides(&self, text: &str) -> Result<Self, CraneError> {
        let overrides: toml::Table = toml::from_str(text).map_err(|e| CraneError::Config(e.to_string()))?;
        let mut base = match toml::Value::try_from(self) {
            Ok(toml::Value::Table(t)) => t,
            Ok(_) => unreachable!("configuration serializes to a table"),
            Err(e) => return Err(CraneError::Config(e.to_string())),
        };
        merge(&mut base, overrides);
        let cfg: Self = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| CraneError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_overrides_file(&self, path: &Path) -> Result<Self, CraneError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CraneError::Config(format!("{}: {e}", path.display())))?;
        self.with_overrides(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate
    }

    /// Number of filter time steps.
    pub fn steps(&self) -> usize {
        (self.duration * self.rate).round() as usize
    }

    pub fn gravity(&self) -> Vector3<f64> {
        Vector3::from(self.gravity)
    }

    pub fn validate(&self) -> Result<(), CraneError> {
        let bad = |msg: &str| Err(CraneError::Config(msg.into()));
        if !(1..=3).contains(&self.scenario_id) {
            return bad("scenario_id must be 1, 2 or 3");
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return bad("rate must be positive");
        }
        if !(self.duration > 0.0) || self.steps() < 3 {
            return bad("duration must cover at least 3 steps");
        }
        if self.n_max == 0 || !(self.tol > 0.0) {
            return bad("n_max and tol must be positive");
        }
        if self.substeps == 0 {
            return bad("substeps must be positive");
        }
        if self.n_sims == 0 {
            return bad("n_sims must be positive");
        }
        for (name, m, dim) in [("q", &self.q, 6), ("n", &self.n, 3), ("p0", &self.p0, 9)] {
            if m.shape() != (dim, dim) {
                return Err(CraneError::Config(format!("{name} must be {dim}x{dim}")));
            }
            if (m - m.transpose()).norm() > 1e-12 * m.norm().max(1.0) {
                return Err(CraneError::Config(format!("{name} must be symmetric")));
            }
            belief::factor(m).map_err(|e| CraneError::Config(format!("{name}: {e}")))?;
        }
        if let GainMode::Regularized(delta) = self.gain_mode {
            if !(delta > 0.0) {
                return bad("regularization delta must be positive");
            }
        }
        let th = self.initial.theta;
        if !(th > 0.0 && th < PI) {
            return bad("initial theta must lie in (0, pi)");
        }
        self.cable_profile.validate()
    }

    /// Cable length at time index `k`.
    pub fn cable_length(&self, k: usize) -> f64 {
        cable_length(&self.cable_profile, k as f64 * self.dt())
    }
}

fn merge(base: &mut toml::Table, overrides: toml::Table) {
    for (key, value) in overrides {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Piecewise-linear interpolation of the profile at time `t`.
pub fn cable_length(profile: &CableProfile, t: f64) -> f64 {
    profile.length(t)
}

// ---------------------------------------------------------------------------
// Dynamics

/// One step of the IMU model with noise `w = (w_ω, w_a)`.
pub fn imu_propagate(pose: &ExtendedPose, s: &ImuSample, w: &Vector6<f64>, g: &Vector3<f64>) -> ExtendedPose {
    let w_omega = w.fixed_rows::<3>(0);
    let w_acc = w.fixed_rows::<3>(3);
    ExtendedPose {
        r: pose.r * so3_exp(&((s.omega + w_omega) * s.dt)),
        v: pose.v + (pose.r * (s.accel + w_acc) + g) * s.dt,
        p: pose.p + pose.v * s.dt,
    }
}

// d/dt (θ, φ, θ̇, φ̇)
fn pendulum_rhs(x: &[f64; 4], l: f64, l_dot: f64, g: f64) -> [f64; 4] {
    let [theta, _, td, pd] = *x;
    let (s, c) = theta.sin_cos();
    let coupling = if pd == 0.0 { 0.0 } else { 2.0 * c / s * td * pd };
    [
        td,
        pd,
        s * c * pd * pd - g / l * s - 2.0 * l_dot / l * td,
        -coupling - 2.0 * l_dot / l * pd,
    ]
}

/// Ground truth at every filter step.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub dt: f64,
    pub pendulum: Vec<PendulumState>,
    pub poses: Vec<ExtendedPose>,
    pub lengths: Vec<f64>,
}

/// Integrates the pendulum and builds hook poses for `cfg.steps()` steps.
///
/// With `φ̇ = 0` the motion is planar and `θ` is allowed to change sign.
pub fn simulate_truth(cfg: &ScenarioConfig) -> Result<Truth, CraneError> {
    let dt = cfg.dt();
    let steps = cfg.steps();
    let h = dt / cfg.substeps as f64;
    let g = cfg.gravity().norm();
    let profile = &cfg.cable_profile;
    let init = cfg.initial.state();
    let mut x = [init.theta, init.phi, init.theta_dot, init.phi_dot];
    let mut pendulum = Vec::with_capacity(steps + 1);
    let state_of = |x: &[f64; 4]| PendulumState {
        theta: x[0],
        phi: x[1],
        theta_dot: x[2],
        phi_dot: x[3],
        hang_point: init.hang_point,
    };
    pendulum.push(state_of(&x));
    for k in 0..steps {
        for j in 0..cfg.substeps {
            let t = k as f64 * dt + j as f64 * h;
            let f = |t: f64, x: &[f64; 4]| pendulum_rhs(x, profile.length(t), profile.rate(t), g);
            let add = |x: &[f64; 4], d: &[f64; 4], s: f64| std::array::from_fn::<f64, 4, _>(|i| x[i] + s * d[i]);
            let k1 = f(t, &x);
            let k2 = f(t + 0.5 * h, &add(&x, &k1, 0.5 * h));
            let k3 = f(t + 0.5 * h, &add(&x, &k2, 0.5 * h));
            let k4 = f(t + h, &add(&x, &k3, h));
            x = std::array::from_fn(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
            let polar_singular = x[3] != 0.0 && x[0].sin().abs() < 1e-9;
            if x.iter().any(|v| !v.is_finite()) || polar_singular {
                return Err(CraneError::IntegrationDiverged { t: t + h });
            }
        }
        pendulum.push(state_of(&x));
    }

    let lengths: Vec<f64> = (0..=steps).map(|k| cfg.cable_length(k)).collect();
    let positions: Vec<Vector3<f64>> = pendulum.iter().zip(&lengths).map(|(s, &l)| s.position(l)).collect();
    let poses = (0..steps)
        .map(|k| ExtendedPose {
            r: pendulum[k].attitude(),
            v: (positions[k + 1] - positions[k]) / dt,
            p: positions[k],
        })
        .collect();
    pendulum.truncate(steps);
    let mut lengths = lengths;
    lengths.truncate(steps);
    Ok(Truth {
        dt,
        pendulum,
        poses,
        lengths,
    })
}

/// Noise-free IMU samples that map `poses[k]` to `poses[k + 1]` exactly.
pub fn imu_from_truth(poses: &[ExtendedPose], dt: f64, g: &Vector3<f64>) -> Vec<ImuSample> {
    poses
        .windows(2)
        .map(|w| {
            let omega = lie::so3_log(&(w[0].r.transpose() * w[1].r)).expect("rotation per step is small") / dt;
            let accel = w[0].r.transpose() * ((w[1].v - w[0].v) / dt - g);
            ImuSample { omega, accel, dt }
        })
        .collect()
}

/// [`imu_from_truth`] plus Gaussian noise with covariance `q`.
pub fn synthesize_imu<R: Rng + ?Sized>(
    poses: &[ExtendedPose],
    dt: f64,
    g: &Vector3<f64>,
    q: &CovFactor,
    rng: &mut R,
) -> Vec<ImuSample> {
    imu_from_truth(poses, dt, g)
        .into_iter()
        .map(|s| add_imu_noise(&s, q, rng))
        .collect()
}

pub fn add_imu_noise<R: Rng + ?Sized>(s: &ImuSample, q: &CovFactor, rng: &mut R) -> ImuSample {
    let w = q.sample(rng);
    ImuSample {
        omega: s.omega + w.fixed_rows::<3>(0),
        accel: s.accel + w.fixed_rows::<3>(3),
        dt: s.dt,
    }
}

// ---------------------------------------------------------------------------
// Measurements and Jacobians

pub fn lever(l: f64) -> Vector3<f64> {
    Vector3::new(0.0, 0.0, l)
}

/// `y = R r + p + n` with `n` drawn from `noise`.
pub fn measure<R: Rng + ?Sized>(pose: &ExtendedPose, l: f64, noise: &CovFactor, rng: &mut R) -> Vector3<f64> {
    let n = noise.sample(rng);
    pose.r * lever(l) + pose.p + Vector3::new(n[0], n[1], n[2])
}

/// `d = (0, 0, l, 0, 1)`.
pub fn invariant_d(l: f64) -> DVector<f64> {
    DVector::from_row_slice(&[0.0, 0.0, l, 0.0, 1.0])
}

/// `(y, 0, 1)`.
pub fn invariant_y(y: &Vector3<f64>) -> DVector<f64> {
    DVector::from_row_slice(&[y[0], y[1], y[2], 0.0, 1.0])
}

pub fn invariant_measurement(y: &Vector3<f64>, l: f64, noise: &DMatrix<f64>) -> InvariantMeasurement {
    InvariantMeasurement::new(invariant_d(l), invariant_y(y), noise.clone())
}

fn omega_matrix(s: &ImuSample) -> Matrix3<f64> {
    so3_exp(&(s.omega * s.dt))
}

fn put(m: &mut DMatrix<f64>, row: usize, col: usize, block: &Matrix3<f64>) {
    m.fixed_view_mut::<3, 3>(row, col).copy_from(block);
}

/// EKF `(F, G, H)` in the `(log(R̂ᵀR), v − v̂, p − p̂)` error coordinates.
pub fn jacobians_ekf(pose: &ExtendedPose, s: &ImuSample, l: f64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let dt = s.dt;
    let omega_inv = omega_matrix(s).transpose();
    let i3 = Matrix3::identity();
    let mut f = DMatrix::zeros(9, 9);
    put(&mut f, 0, 0, &omega_inv);
    put(&mut f, 3, 0, &(-pose.r * skew(&s.accel) * dt));
    put(&mut f, 3, 3, &i3);
    put(&mut f, 6, 3, &(i3 * dt));
    put(&mut f, 6, 6, &i3);

    let mut g = DMatrix::zeros(9, 6);
    put(&mut g, 0, 0, &(so3_left_jacobian(&(-s.omega * dt)) * dt));
    put(&mut g, 3, 3, &(pose.r * dt));

    (f, g, ekf_output_jacobian(pose, l))
}

/// `[−R̂ (r)× 0 I]`.
pub fn ekf_output_jacobian(pose: &ExtendedPose, l: f64) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(3, 9);
    put(&mut h, 0, 0, &(-pose.r * skew(&lever(l))));
    put(&mut h, 0, 6, &Matrix3::identity());
    h
}

/// Left-invariant `(F, G, H)`; independent of the estimate.
pub fn jacobians_iekf(s: &ImuSample, l: f64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let dt = s.dt;
    let omega_inv = omega_matrix(s).transpose();
    let mut f = DMatrix::zeros(9, 9);
    put(&mut f, 0, 0, &omega_inv);
    put(&mut f, 3, 0, &(-omega_inv * skew(&s.accel) * dt));
    put(&mut f, 3, 3, &omega_inv);
    put(&mut f, 6, 3, &(omega_inv * dt));
    put(&mut f, 6, 6, &omega_inv);

    let mut g = DMatrix::zeros(9, 6);
    put(&mut g, 0, 0, &(so3_left_jacobian(&(-s.omega * dt)) * dt));
    put(&mut g, 3, 3, &(omega_inv * dt));

    let mut h = DMatrix::zeros(3, 9);
    put(&mut h, 0, 0, &(-skew(&lever(l))));
    put(&mut h, 0, 6, &Matrix3::identity());
    (f, g, h)
}

// ---------------------------------------------------------------------------
// Filter models

/// IMU dynamics for the EKF and IterEKF.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfProcess {
    pub q: DMatrix<f64>,
    pub gravity: Vector3<f64>,
}

impl ProcessModel<ExtendedPose> for EkfProcess {
    type Input = ImuSample;

    fn propagate(&self, x: &ExtendedPose, s: &ImuSample) -> ExtendedPose {
        imu_propagate(x, s, &Vector6::zeros(), &self.gravity)
    }

    fn jacobians(&self, x: &ExtendedPose, s: &ImuSample) -> (DMatrix<f64>, DMatrix<f64>) {
        let (f, g, _) = jacobians_ekf(x, s, 0.0);
        (f, g)
    }

    fn process_noise(&self) -> &DMatrix<f64> {
        &self.q
    }
}

/// IMU dynamics for the IEKF and IIEKF on SE2(3).
#[derive(Debug, Clone, PartialEq)]
pub struct IekfProcess {
    pub q: DMatrix<f64>,
    pub gravity: Vector3<f64>,
}

impl ProcessModel<GroupElement> for IekfProcess {
    type Input = ImuSample;

    fn propagate(&self, x: &GroupElement, s: &ImuSample) -> GroupElement {
        let pose = ExtendedPose::from_group(x);
        imu_propagate(&pose, s, &Vector6::zeros(), &self.gravity).to_group()
    }

    fn jacobians(&self, _: &GroupElement, s: &ImuSample) -> (DMatrix<f64>, DMatrix<f64>) {
        let (f, g, _) = jacobians_iekf(s, 0.0);
        (f, g)
    }

    fn process_noise(&self) -> &DMatrix<f64> {
        &self.q
    }
}

/// Hang-point measurement `y = R r + p` for the EKF and IterEKF.
#[derive(Debug, Clone, PartialEq)]
pub struct CableMeasurement {
    pub l: f64,
    pub noise: DMatrix<f64>,
}

impl MeasurementModel<ExtendedPose> for CableMeasurement {
    fn predict(&self, x: &ExtendedPose) -> DVector<f64> {
        let y = x.r * lever(self.l) + x.p;
        DVector::from_column_slice(y.as_slice())
    }

    fn jacobian(&self, x: &ExtendedPose) -> DMatrix<f64> {
        ekf_output_jacobian(x, self.l)
    }

    fn noise(&self) -> &DMatrix<f64> {
        &self.noise
    }
}

pub fn pose_is_finite(x: &ExtendedPose) -> bool {
    x.is_finite()
}

// ---------------------------------------------------------------------------
// Observability

#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityReport {
    /// 9×9 matrix stacking the linearized innovations at k, k−1, k−2.
    pub o: DMatrix<f64>,
    pub rank: usize,
    pub psi: Matrix3<f64>,
    pub phi: Matrix3<f64>,
    pub sigma: Matrix3<f64>,
    /// Third block row after eliminating the first two: `[(b)× 0]`.
    pub reduced_block: DMatrix<f64>,
    pub reduced_rank: usize,
}

/// Singular values below `tol · σ_max` count as zero.
pub fn numeric_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let sv = m.singular_values();
    let cutoff = tol * sv.max();
    sv.iter().filter(|s| **s > cutoff && **s > 0.0).count()
}

/// Observability matrix from the inputs at `k−2, k−1` and lever arms at
/// `k−2, k−1, k` (each slice ordered oldest first).
pub fn observability_matrix(samples: &[ImuSample; 2], r: &[Vector3<f64>; 3], dt: f64) -> ObservabilityReport {
    let omega = |s: &ImuSample| so3_exp(&(s.omega * dt));
    let (om2, om1) = (omega(&samples[0]), omega(&samples[1]));
    let (a2, a1) = (samples[0].accel, samples[1].accel);
    let (r2, r1, r0) = (r[0], r[1], r[2]);
    let dt2 = dt * dt;
    let om1_inv = om1.transpose();

    let psi = -skew(&(r1 + a1 * dt2)) * om1;
    let phi = om2 * om1;
    let phi_inv = phi.transpose();
    let sigma = -phi * skew(&(phi_inv * (r2 + a2 * dt2) + om1_inv * a1 * (2.0 * dt2)));

    let i3 = Matrix3::identity();
    let mut o = DMatrix::zeros(9, 9);
    put(&mut o, 0, 0, &(-skew(&r0)));
    put(&mut o, 0, 6, &i3);
    put(&mut o, 3, 0, &psi);
    put(&mut o, 3, 3, &(-om1 * dt));
    put(&mut o, 3, 6, &om1);
    put(&mut o, 6, 0, &sigma);
    put(&mut o, 6, 3, &(-phi * (2.0 * dt)));
    put(&mut o, 6, 6, &phi);

    let block = |i: usize| o.rows(3 * i, 3).into_owned();
    let reduced_block = -to_dyn3(&phi_inv) * block(2) + to_dyn3(&(om1_inv * 2.0)) * block(1) - block(0);
    let scale = o.norm().max(1.0);
    let reduced_rank = if reduced_block.norm() <= 1e-12 * scale {
        0
    } else {
        numeric_rank(&reduced_block, 1e-9)
    };

    ObservabilityReport {
        rank: numeric_rank(&o, 1e-9),
        o,
        psi,
        phi,
        sigma,
        reduced_block,
        reduced_rank,
    }
}

fn to_dyn3(m: &Matrix3<f64>) -> DMatrix<f64> {
    lie::to_dyn(m)
}
