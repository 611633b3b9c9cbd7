//! Kalman filter family: linear KF, EKF and iterated EKF on error-state
//! models, and the left-invariant IEKF / IIEKF on matrix Lie groups.
//!
//! The iterated updates are Gauss-Newton descents on the MAP cost of the
//! latest measurement. With `n_max = 1` they perform exactly the arithmetic of
//! their single-step counterparts, which is how [`ekf_update`] and
//! [`iekf_update`] are implemented.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{gain, riccati_update, Belief, BeliefError, GainMode, GroupBelief, VectorBelief};
use crate::lie::{GroupElement, GroupKind, LieError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error("non-finite iterate after {iterations} Gauss-Newton iterations")]
    NonFinite { iterations: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Gauss-Newton settings shared by the iterated filters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnConfig {
    pub tol: f64,
    pub n_max: usize,
    pub gain_mode: GainMode,
    /// Keep every iterate ξⁱ in the [`UpdateReport`].
    #[serde(default)]
    pub record_iterates: bool,
}

impl Default for GnConfig {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            n_max: 50,
            gain_mode: GainMode::Standard,
            record_iterates: false,
        }
    }
}

impl GnConfig {
    pub fn with_mode(gain_mode: GainMode) -> Self {
        Self {
            gain_mode,
            ..Self::default()
        }
    }

    pub fn single_step(self) -> Self {
        Self { n_max: 1, ..self }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UpdateReport {
    pub iterations: usize,
    pub converged: bool,
    /// Δξ of the last iteration.
    pub step_norm: f64,
    /// Innovation at the prior estimate.
    pub innovation: DVector<f64>,
    /// Iterates ξ¹, ξ², … when `record_iterates` is set.
    pub iterates: Vec<DVector<f64>>,
}

fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

// ---------------------------------------------------------------------------
// Linear Kalman filter

/// `x⁺ = F x + B u + w`, `y = H x + n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub f: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub n: DMatrix<f64>,
}

pub fn kf_predict(belief: &VectorBelief, model: &LinearModel, u: &DVector<f64>) -> VectorBelief {
    let mean = &model.f * &belief.mean + &model.b * u;
    let cov = &model.f * &belief.cov * model.f.transpose() + &model.q;
    Belief::new(mean, cov)
}

pub fn kf_update(
    belief: &VectorBelief,
    h: &DMatrix<f64>,
    y: &DVector<f64>,
    noise: &DMatrix<f64>,
    mode: GainMode,
) -> Result<(VectorBelief, UpdateReport), FilterError> {
    if h.ncols() != belief.mean.len() || h.nrows() != y.len() {
        return Err(FilterError::Shape(format!(
            "H is {}x{}, state has {} entries, y has {}",
            h.nrows(),
            h.ncols(),
            belief.mean.len(),
            y.len()
        )));
    }
    let z = y - h * &belief.mean;
    let k = gain(mode, &belief.cov, h, noise)?;
    let step = &k * &z;
    let mean = &belief.mean + &step;
    if !all_finite(&mean) {
        return Err(FilterError::NonFinite { iterations: 1 });
    }
    let cov = riccati_update(&belief.cov, &k, h);
    let report = UpdateReport {
        iterations: 1,
        converged: true,
        step_norm: step.norm(),
        innovation: z,
        iterates: Vec::new(),
    };
    Ok((Belief { mean, cov }, report))
}

// ---------------------------------------------------------------------------
// Error-state EKF / iterated EKF

/// A state with a local error parametrization `x = x̂ ⊞ δ`.
pub trait ErrorState: Clone {
    fn retract(&self, delta: &DVector<f64>) -> Self;

    /// Derivative of the local coordinates of `self ⊞ δ` with respect to δ,
    /// i.e. the matrix `D` with `(self ⊞ (δ + ε)) ≈ (self ⊞ δ) ⊞ D ε`.
    fn retraction_jacobian(&self, delta: &DVector<f64>) -> DMatrix<f64>;
}

impl ErrorState for DVector<f64> {
    fn retract(&self, delta: &DVector<f64>) -> Self {
        self + delta
    }

    fn retraction_jacobian(&self, delta: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(delta.len(), delta.len())
    }
}

impl ErrorState for GroupElement {
    fn retract(&self, delta: &DVector<f64>) -> Self {
        GroupElement::retract(self, delta).expect("tangent dimension matches group")
    }

    fn retraction_jacobian(&self, delta: &DVector<f64>) -> DMatrix<f64> {
        self.kind()
            .right_jacobian(delta)
            .expect("tangent dimension matches group")
    }
}

/// Discrete dynamics `x⁺ = f(x, u)` with error Jacobians `F`, `G` and process
/// noise covariance `Q`.
pub trait ProcessModel<S> {
    type Input;

    fn propagate(&self, state: &S, input: &Self::Input) -> S;

    /// `(F, G)` evaluated at `(state, input, 0)`.
    fn jacobians(&self, state: &S, input: &Self::Input) -> (DMatrix<f64>, DMatrix<f64>);

    fn process_noise(&self) -> &DMatrix<f64>;
}

/// Output map `y = h(x) + n`.
pub trait MeasurementModel<S> {
    fn predict(&self, state: &S) -> DVector<f64>;

    /// Jacobian of `h(x ⊞ δ)` with respect to δ at δ = 0.
    fn jacobian(&self, state: &S) -> DMatrix<f64>;

    fn noise(&self) -> &DMatrix<f64>;
}

/// `x̂⁺ = f(x̂, u)`, `P⁺ = F P Fᵀ + G Q Gᵀ`. Also the IEKF propagation when `S`
/// is a group element.
pub fn ekf_predict<S, M>(belief: &Belief<S>, model: &M, input: &M::Input) -> Belief<S>
where
    M: ProcessModel<S>,
{
    let (f, g) = model.jacobians(&belief.mean, input);
    let mean = model.propagate(&belief.mean, input);
    let cov = &f * &belief.cov * f.transpose() + &g * model.process_noise() * g.transpose();
    Belief::new(mean, cov)
}

/// IEKF propagation; the model's Jacobians are those of the left-invariant error.
pub fn iekf_predict<M>(belief: &GroupBelief, model: &M, input: &M::Input) -> GroupBelief
where
    M: ProcessModel<GroupElement>,
{
    ekf_predict(belief, model, input)
}

/// Single-step EKF update; identical to [`iterekf_update`] with `n_max = 1`.
pub fn ekf_update<S, M>(
    belief: &Belief<S>,
    model: &M,
    y: &DVector<f64>,
    cfg: &GnConfig,
) -> Result<(Belief<S>, UpdateReport), FilterError>
where
    S: ErrorState,
    M: MeasurementModel<S>,
{
    iterekf_update(belief, model, y, &cfg.single_step())
}

/// Iterated EKF. Gauss-Newton on
/// `½‖δ‖²_P + ½‖y − h(x̂ ⊞ δ)‖²_N`, iterating
/// `δⁱ⁺¹ = Kⁱ (y − h(xⁱ) + Hⁱ δⁱ)` with `xⁱ = x̂ ⊞ δⁱ`.
/// The covariance update uses the last linearization.
pub fn iterekf_update<S, M>(
    belief: &Belief<S>,
    model: &M,
    y: &DVector<f64>,
    cfg: &GnConfig,
) -> Result<(Belief<S>, UpdateReport), FilterError>
where
    S: ErrorState,
    M: MeasurementModel<S>,
{
    let n = belief.cov.nrows();
    let mut delta = DVector::zeros(n);
    let mut step_norm = f64::INFINITY;
    let mut iterations = 0;
    let mut last: Option<(DMatrix<f64>, DMatrix<f64>)> = None;
    let mut iterates = Vec::new();
    let innovation = y - model.predict(&belief.mean);

    while step_norm > cfg.tol && iterations < cfg.n_max {
        let x_i = belief.mean.retract(&delta);
        let h_i = model.jacobian(&x_i) * belief.mean.retraction_jacobian(&delta);
        let k_i = gain(cfg.gain_mode, &belief.cov, &h_i, model.noise())?;
        let z_i = y - model.predict(&x_i) + &h_i * &delta;
        let next = &k_i * z_i;
        iterations += 1;
        if !all_finite(&next) {
            return Err(FilterError::NonFinite { iterations });
        }
        step_norm = (&next - &delta).norm();
        delta = next;
        if cfg.record_iterates {
            iterates.push(delta.clone());
        }
        last = Some((k_i, h_i));
    }

    let (k, h) = match last {
        Some(kh) => kh,
        None => return Err(FilterError::Shape("n_max must be at least 1".into())),
    };
    let mean = belief.mean.retract(&delta);
    let cov = riccati_update(&belief.cov, &k, &h);
    let report = UpdateReport {
        iterations,
        converged: step_norm <= cfg.tol,
        step_norm,
        innovation,
        iterates,
    };
    Ok((Belief { mean, cov }, report))
}

// ---------------------------------------------------------------------------
// Invariant filters

/// Left-invariant observation `y = χ d + n`. `noise` is the covariance of `n`
/// restricted to the informative rows of the group (3×3 for the affine groups).
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantMeasurement {
    pub d: DVector<f64>,
    pub y: DVector<f64>,
    pub noise: DMatrix<f64>,
}

impl InvariantMeasurement {
    pub fn new(d: DVector<f64>, y: DVector<f64>, noise: DMatrix<f64>) -> Self {
        Self { d, y, noise }
    }

    /// Noise-free measurement; the noise block is zero.
    pub fn exact(kind: &GroupKind, d: DVector<f64>, y: DVector<f64>) -> Self {
        let m = kind.informative_rows().len();
        Self {
            d,
            y,
            noise: DMatrix::zeros(m, m),
        }
    }

    /// Right-invariant equation `χ⁻¹ d = y`, rewritten as `χ y = d`.
    pub fn from_right_invariant(d: DVector<f64>, y: DVector<f64>, noise: DMatrix<f64>) -> Self {
        Self { d: y, y: d, noise }
    }
}

/// Full N×n Jacobian with columns `Λ(eⱼ) d`. Independent of the estimate.
pub fn invariant_output_jacobian(kind: &GroupKind, d: &DVector<f64>) -> Result<DMatrix<f64>, LieError> {
    let size = kind.matrix_size();
    if d.len() != size {
        return Err(LieError::DimensionMismatch {
            expected: size,
            got: d.len(),
        });
    }
    let n = kind.dim();
    let mut h = DMatrix::zeros(size, n);
    for j in 0..n {
        let e = DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 });
        h.set_column(j, &(kind.hat(&e)? * d));
    }
    Ok(h)
}

/// Informative rows of [`invariant_output_jacobian`]; this is the H the
/// invariant filters use.
pub fn invariant_measurement_jacobian(kind: &GroupKind, d: &DVector<f64>) -> Result<DMatrix<f64>, LieError> {
    let full = invariant_output_jacobian(kind, d)?;
    Ok(full.select_rows(kind.informative_rows().iter()))
}

fn check_measurement(belief: &GroupBelief, meas: &InvariantMeasurement) -> Result<(), FilterError> {
    let kind = belief.mean.kind();
    let size = kind.matrix_size();
    let m = kind.informative_rows().len();
    if meas.d.len() != size || meas.y.len() != size {
        return Err(FilterError::Shape(format!(
            "d and y must have {size} entries, got {} and {}",
            meas.d.len(),
            meas.y.len()
        )));
    }
    if meas.noise.shape() != (m, m) {
        return Err(FilterError::Shape(format!(
            "noise must be {m}x{m}, got {}x{}",
            meas.noise.nrows(),
            meas.noise.ncols()
        )));
    }
    if belief.cov.shape() != (kind.dim(), kind.dim()) {
        return Err(FilterError::Shape(format!(
            "covariance must be {0}x{0}",
            kind.dim()
        )));
    }
    Ok(())
}

/// Iterated invariant EKF update.
///
/// Gauss-Newton on `½‖ξ‖²_P + ½‖z − exp(ξ)d + d‖²_N̂` with the innovation
/// `z = χ̂⁻¹y − d`, `N̂ = χ̂⁻¹ N χ̂⁻ᵀ` and iterates
/// `ξⁱ⁺¹ = Kⁱ (z − exp(ξⁱ)d + d + Hⁱ ξⁱ)`, `Hⁱ = exp(ξⁱ) H 𝒥_r(ξⁱ)`.
/// The mean becomes `χ̂ exp(ξ*)`; the covariance update uses the
/// estimate-independent `H` and the first gain `K⁰` only.
/// Rows that are identically zero in `H` (the bottom rows of the affine
/// groups) are dropped before any gain is computed.
pub fn iiekf_update(
    belief: &GroupBelief,
    meas: &InvariantMeasurement,
    cfg: &GnConfig,
) -> Result<(GroupBelief, UpdateReport), FilterError> {
    check_measurement(belief, meas)?;
    let kind = belief.mean.kind();
    let rows = kind.informative_rows();
    let h_full = invariant_output_jacobian(kind, &meas.d)?;
    let inv = belief.mean.inverse();
    let z = (inv.matrix() * &meas.y - &meas.d).select_rows(rows.iter());
    let noise_hat = match cfg.gain_mode {
        GainMode::Standard => {
            let a = inv.matrix().select_rows(rows.iter()).select_columns(rows.iter());
            &a * &meas.noise * a.transpose()
        }
        _ => meas.noise.clone(),
    };

    let n = kind.dim();
    let mut xi = DVector::zeros(n);
    let mut step_norm = f64::INFINITY;
    let mut iterations = 0;
    let mut first_gain: Option<(DMatrix<f64>, DMatrix<f64>)> = None;
    let mut iterates = Vec::new();

    while step_norm > cfg.tol && iterations < cfg.n_max {
        let e = kind.exp(&xi)?;
        let h_i = (e.matrix() * &h_full * kind.right_jacobian(&xi)?).select_rows(rows.iter());
        let k_i = gain(cfg.gain_mode, &belief.cov, &h_i, &noise_hat)?;
        let pred = (e.matrix() * &meas.d - &meas.d).select_rows(rows.iter());
        let z_i = &z - pred + &h_i * &xi;
        let next = &k_i * z_i;
        iterations += 1;
        if !all_finite(&next) {
            return Err(FilterError::NonFinite { iterations });
        }
        step_norm = (&next - &xi).norm();
        xi = next;
        if cfg.record_iterates {
            iterates.push(xi.clone());
        }
        if first_gain.is_none() {
            // ξ⁰ = 0 so H⁰ = H and K⁰ is the gain of the covariance update
            first_gain = Some((k_i, h_i));
        }
    }

    let (k, h) = first_gain.ok_or_else(|| FilterError::Shape("n_max must be at least 1".into()))?;
    let mean = belief.mean.retract(&xi)?;
    if mean.matrix().iter().any(|x| !x.is_finite()) {
        return Err(FilterError::NonFinite { iterations });
    }
    let cov = riccati_update(&belief.cov, &k, &h);
    let report = UpdateReport {
        iterations,
        converged: step_norm <= cfg.tol,
        step_norm,
        innovation: z,
        iterates,
    };
    Ok((Belief { mean, cov }, report))
}

/// Single-gain invariant EKF update: [`iiekf_update`] with `n_max = 1`.
pub fn iekf_update(
    belief: &GroupBelief,
    meas: &InvariantMeasurement,
    gain_mode: GainMode,
) -> Result<(GroupBelief, UpdateReport), FilterError> {
    iiekf_update(belief, meas, &GnConfig::with_mode(gain_mode).single_step())
}

/// IIEKF for a noise-free measurement `y = χ d`: every gain is the limit
/// `L (Hⁱ L)†`.
pub fn iiekf_update_noise_free(
    belief: &GroupBelief,
    d: &DVector<f64>,
    y: &DVector<f64>,
    cfg: &GnConfig,
) -> Result<(GroupBelief, UpdateReport), FilterError> {
    let meas = InvariantMeasurement::exact(belief.mean.kind(), d.clone(), y.clone());
    let cfg = GnConfig {
        gain_mode: GainMode::NoiseFree,
        ..*cfg
    };
    iiekf_update(belief, &meas, &cfg)
}

/// `(‖χ̂ d − y‖, ‖H P Hᵀ‖_F)`: both vanish when the belief is compatible with
/// the noise-free measurement `y = χ d`.
pub fn check_compatibility(
    belief: &GroupBelief,
    d: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<(f64, f64), FilterError> {
    let kind = belief.mean.kind();
    let residual = (belief.mean.act(d)? - y).norm();
    let h = invariant_measurement_jacobian(kind, d)?;
    let projected = (&h * &belief.cov * h.transpose()).norm();
    Ok((residual, projected))
}
