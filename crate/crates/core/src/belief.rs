//! Gaussian beliefs, rank-revealing covariance factors and Kalman gains.
//!
//! Three gains are provided:
//! - [`standard_gain`]: `P Hᵀ (H P Hᵀ + N̂)⁻¹`;
//! - [`noise_free_gain`]: the zero-noise limit `L (H L)†` with `P = L Lᵀ`;
//! - [`regularized_gain`]: `P Hᵀ (H P Hᵀ + δ I)⁻¹`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lie::GroupElement;

/// Eigenvalues below this fraction of the largest one are treated as zero.
pub const RANK_TOL: f64 = 1e-12;
/// Most negative eigenvalue accepted as round-off.
pub const PSD_TOL: f64 = 1e-10;
/// Condition number above which the innovation covariance is called singular.
pub const MAX_CONDITION: f64 = 1e12;
/// Singular values below this fraction of the largest one are dropped by
/// [`pseudo_inverse`], in addition to the `max(m, n) · ε` floor.
pub const PINV_RTOL: f64 = 1e-12;
/// Default δ for [`regularized_gain`].
pub const DEFAULT_DELTA: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BeliefError {
    #[error("covariance is not positive semi-definite (eigenvalue {eigenvalue:.3e})")]
    NotPsd { eigenvalue: f64 },
    #[error("innovation covariance is singular (condition number {condition:.3e})")]
    SingularInnovation { condition: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Mean and covariance. The mean is a vector for the KF/EKF family and a
/// group element (concentrated Gaussian `χ = χ̂ exp(ξ)`) for invariant filters.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief<S> {
    pub mean: S,
    pub cov: DMatrix<f64>,
}

pub type VectorBelief = Belief<DVector<f64>>;
pub type GroupBelief = Belief<GroupElement>;

impl<S> Belief<S> {
    pub fn new(mean: S, cov: DMatrix<f64>) -> Self {
        Self {
            mean,
            cov: symmetrize(&cov),
        }
    }
}

/// How the gain is computed during an update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GainMode {
    #[default]
    Standard,
    NoiseFree,
    Regularized(f64),
}

/// `P = L Lᵀ` with `L` of full column rank.
#[derive(Debug, Clone, PartialEq)]
pub struct CovFactor {
    pub l: DMatrix<f64>,
}

impl CovFactor {
    pub fn rank(&self) -> usize {
        self.l.ncols()
    }

    /// Draw from `N(0, L Lᵀ)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.rank(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.l * z
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Rank-revealing factor from the symmetric eigendecomposition.
pub fn factor(p: &DMatrix<f64>) -> Result<CovFactor, BeliefError> {
    let n = p.nrows();
    if p.ncols() != n {
        return Err(BeliefError::Shape(format!("covariance is {}x{}", n, p.ncols())));
    }
    if n == 0 {
        return Ok(CovFactor { l: DMatrix::zeros(0, 0) });
    }
    let eig = SymmetricEigen::new(symmetrize(p));
    let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let lambda_min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if lambda_min < -PSD_TOL * lambda_max.max(1.0) {
        return Err(BeliefError::NotPsd { eigenvalue: lambda_min });
    }
    let cutoff = RANK_TOL * lambda_max;
    let keep: Vec<usize> = (0..n)
        .filter(|&i| eig.eigenvalues[i] > cutoff && eig.eigenvalues[i] > 0.0)
        .collect();
    let mut l = DMatrix::zeros(n, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        l.set_column(c, &(eig.eigenvectors.column(i) * eig.eigenvalues[i].sqrt()));
    }
    Ok(CovFactor { l })
}

/// Numerical rank of a covariance, using the same cutoff as [`factor`].
pub fn rank(p: &DMatrix<f64>) -> usize {
    factor(p).map(|f| f.rank()).unwrap_or(0)
}

/// Numerical rank with eigenvalues compared against `RANK_TOL · scale`, for
/// covariances that may have collapsed entirely to round-off.
pub fn rank_scaled(p: &DMatrix<f64>, scale: f64) -> usize {
    if p.is_empty() {
        return 0;
    }
    let cutoff = RANK_TOL * scale;
    SymmetricEigen::new(symmetrize(p))
        .eigenvalues
        .iter()
        .filter(|&&l| l > cutoff)
        .count()
}

/// Moore–Penrose pseudo-inverse with cutoff
/// `max(max(m, n) · ε, PINV_RTOL) · σ_max`.
pub fn pseudo_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return DMatrix::zeros(n, m);
    }
    let svd = a.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let cutoff = (m.max(n) as f64 * f64::EPSILON).max(PINV_RTOL) * sigma_max;
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let mut out = DMatrix::zeros(n, m);
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > cutoff && *s > 0.0 {
            out += v_t.row(i).transpose() * u.column(i).transpose() / *s;
        }
    }
    out
}

fn check_shapes(p: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<(), BeliefError> {
    if p.nrows() != p.ncols() || h.ncols() != p.nrows() {
        return Err(BeliefError::Shape(format!(
            "P is {}x{}, H is {}x{}",
            p.nrows(),
            p.ncols(),
            h.nrows(),
            h.ncols()
        )));
    }
    Ok(())
}

// K = P Hᵀ S⁻¹ computed as the transpose of S⁻¹ (H P).
fn gain_with_innovation(
    p: &DMatrix<f64>,
    h: &DMatrix<f64>,
    s: DMatrix<f64>,
) -> Result<DMatrix<f64>, BeliefError> {
    let sv = s.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if s.nrows() > 0 && (condition > MAX_CONDITION || !condition.is_finite()) {
        return Err(BeliefError::SingularInnovation { condition });
    }
    let hp = h * p;
    let solved = s
        .lu()
        .solve(&hp)
        .ok_or(BeliefError::SingularInnovation { condition })?;
    Ok(solved.transpose())
}

pub fn standard_gain(
    p: &DMatrix<f64>,
    h: &DMatrix<f64>,
    noise: &DMatrix<f64>,
) -> Result<DMatrix<f64>, BeliefError> {
    check_shapes(p, h)?;
    if noise.shape() != (h.nrows(), h.nrows()) {
        return Err(BeliefError::Shape(format!(
            "noise is {}x{}, expected {}x{}",
            noise.nrows(),
            noise.ncols(),
            h.nrows(),
            h.nrows()
        )));
    }
    let s = symmetrize(&(h * p * h.transpose() + noise));
    gain_with_innovation(p, h, s)
}

/// `L (H L)†`. Always defined.
pub fn noise_free_gain(p: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<DMatrix<f64>, BeliefError> {
    check_shapes(p, h)?;
    let l = factor(p)?.l;
    Ok(&l * pseudo_inverse(&(h * &l)))
}

pub fn regularized_gain(
    p: &DMatrix<f64>,
    h: &DMatrix<f64>,
    delta: f64,
) -> Result<DMatrix<f64>, BeliefError> {
    if !(delta > 0.0) {
        return Err(BeliefError::Shape(format!("delta must be positive, got {delta}")));
    }
    check_shapes(p, h)?;
    let m = h.nrows();
    let s = symmetrize(&(h * p * h.transpose() + DMatrix::identity(m, m) * delta));
    gain_with_innovation(p, h, s)
}

/// Gain for the chosen mode. `noise` is only read in [`GainMode::Standard`].
pub fn gain(
    mode: GainMode,
    p: &DMatrix<f64>,
    h: &DMatrix<f64>,
    noise: &DMatrix<f64>,
) -> Result<DMatrix<f64>, BeliefError> {
    match mode {
        GainMode::Standard => standard_gain(p, h, noise),
        GainMode::NoiseFree => noise_free_gain(p, h),
        GainMode::Regularized(delta) => regularized_gain(p, h, delta),
    }
}

/// `P⁺ = (I − K H) P`, symmetrized.
pub fn riccati_update(p: &DMatrix<f64>, k: &DMatrix<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
    let n = p.nrows();
    symmetrize(&((DMatrix::identity(n, n) - k * h) * p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    #[test]
    fn factor_identity_and_singular() {
        let f = factor(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(f.rank(), 3);
        assert_relative_eq!(&f.l * f.l.transpose(), DMatrix::identity(3, 3), epsilon = 1e-15);

        let f = factor(&m(2, 2, &[1., 0., 0., 0.])).unwrap();
        assert_eq!(f.rank(), 1);
        assert_relative_eq!(f.l[(0, 0)].abs(), 1.0, epsilon = 1e-15);
        assert_eq!(f.l[(1, 0)], 0.0);

        assert!(matches!(
            factor(&m(2, 2, &[1., 0., 0., -1.])),
            Err(BeliefError::NotPsd { .. })
        ));
        assert_eq!(factor(&DMatrix::zeros(2, 2)).unwrap().rank(), 0);
    }

    #[test]
    fn standard_gain_scalar() {
        let k = standard_gain(&DMatrix::identity(2, 2), &m(1, 2, &[1., 0.]), &m(1, 1, &[1.])).unwrap();
        assert_relative_eq!(k, m(2, 1, &[0.5, 0.]), epsilon = 1e-15);
        let k = standard_gain(&DMatrix::zeros(2, 2), &m(1, 2, &[1., 0.]), &m(1, 1, &[1.])).unwrap();
        assert_eq!(k, DMatrix::zeros(2, 1));
        assert!(matches!(
            standard_gain(&DMatrix::zeros(2, 2), &m(1, 2, &[1., 0.]), &m(1, 1, &[0.])),
            Err(BeliefError::SingularInnovation { .. })
        ));
    }

    #[test]
    fn noise_free_gain_cases() {
        let h = m(1, 2, &[1., 0.]);
        let k = noise_free_gain(&DMatrix::identity(2, 2), &h).unwrap();
        assert_relative_eq!(k, m(2, 1, &[1., 0.]), epsilon = 1e-15);
        let reg = regularized_gain(&DMatrix::identity(2, 2), &h, 1e-12).unwrap();
        assert_relative_eq!(k, reg, epsilon = 1e-6);

        let k = noise_free_gain(&DMatrix::identity(2, 2), &DMatrix::zeros(1, 2)).unwrap();
        assert_eq!(k, DMatrix::zeros(2, 1));

        // im(P) = span(e₂) ⊂ ker(H)
        let k = noise_free_gain(&m(2, 2, &[0., 0., 0., 1.]), &h).unwrap();
        assert_eq!(k, DMatrix::zeros(2, 1));
    }

    #[test]
    fn regularized_gain_cases() {
        let k = regularized_gain(&DMatrix::identity(2, 2), &m(1, 2, &[1., 0.]), 1.0).unwrap();
        assert_relative_eq!(k, m(2, 1, &[0.5, 0.]), epsilon = 1e-15);
        assert!(regularized_gain(&DMatrix::identity(2, 2), &m(1, 2, &[1., 0.]), 0.0).is_err());
    }

    #[test]
    fn riccati_cases() {
        let p = m(2, 2, &[2., 0.5, 0.5, 1.]);
        assert_eq!(riccati_update(&p, &DMatrix::zeros(2, 1), &m(1, 2, &[1., 0.])), p);
        let out = riccati_update(&DMatrix::identity(2, 2), &m(2, 1, &[1., 0.]), &m(1, 2, &[1., 0.]));
        assert_eq!(out, m(2, 2, &[0., 0., 0., 1.]));
    }

    #[test]
    fn pseudo_inverse_of_zero_is_zero() {
        assert_eq!(pseudo_inverse(&DMatrix::zeros(3, 2)), DMatrix::zeros(2, 3));
        assert_eq!(pseudo_inverse(&DMatrix::zeros(3, 0)), DMatrix::zeros(0, 3));
    }
}
