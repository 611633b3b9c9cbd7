//! Estimation error metrics and chi-square consistency bounds.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;
use thiserror::Error;

use crate::belief;
use crate::crane::ExtendedPose;
use crate::lie::{so3_log, GroupElement, LieError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error("covariance has rank 0; no direction to normalize against")]
    SingularCovariance,
    #[error("{0}")]
    Input(String),
}

/// One row of per-run output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub scenario: u8,
    pub sim: usize,
    pub k: usize,
    pub filter: String,
    pub error_norm: f64,
    pub nees: f64,
    pub n_dof: usize,
    pub iterations: usize,
    pub converged: bool,
    pub diverged: bool,
}

/// `log(est⁻¹ · truth)`.
pub fn invariant_error(est: &GroupElement, truth: &GroupElement) -> Result<DVector<f64>, LieError> {
    if est.kind() != truth.kind() {
        return Err(LieError::NotInGroup(format!(
            "cannot compare {} with {}",
            est.kind(),
            truth.kind()
        )));
    }
    est.kind().log(&est.inverse().compose(truth))
}

/// `(log(R̂ᵀR), v − v̂, p − p̂)`.
pub fn ekf_error(est: &ExtendedPose, truth: &ExtendedPose) -> Result<DVector<f64>, LieError> {
    let phi: Vector3<f64> = so3_log(&(est.r.transpose() * truth.r))?;
    let dv = truth.v - est.v;
    let dp = truth.p - est.p;
    Ok(DVector::from_iterator(9, phi.iter().chain(dv.iter()).chain(dp.iter()).copied()))
}

/// `eᵀ P⁺ e` restricted to the image of `P`, with the rank of `P`.
pub fn nees(error: &DVector<f64>, cov: &DMatrix<f64>) -> Result<(f64, usize), MetricsError> {
    if cov.shape() != (error.len(), error.len()) {
        return Err(MetricsError::Input(format!(
            "error has {} entries but covariance is {}x{}",
            error.len(),
            cov.nrows(),
            cov.ncols()
        )));
    }
    let l = belief::factor(cov).map_err(|e| MetricsError::Input(e.to_string()))?.l;
    if l.ncols() == 0 {
        return Err(MetricsError::SingularCovariance);
    }
    // P† = L⁺ᵀ L⁺ with L⁺ = (LᵀL)⁻¹ Lᵀ
    let gram = l.transpose() * &l;
    let w = gram
        .cholesky()
        .ok_or(MetricsError::SingularCovariance)?
        .solve(&(l.transpose() * error));
    Ok((w.norm_squared(), l.ncols()))
}

/// Average NEES over simulations, each with its own covariance.
/// The returned degrees of freedom are the largest rank among the covariances.
pub fn anees(errors: &[DVector<f64>], covs: &[DMatrix<f64>]) -> Result<(f64, usize), MetricsError> {
    if errors.len() != covs.len() || errors.is_empty() {
        return Err(MetricsError::Input(format!(
            "{} errors for {} covariances",
            errors.len(),
            covs.len()
        )));
    }
    let mut total = 0.0;
    let mut dof = 0;
    for (e, p) in errors.iter().zip(covs) {
        let (q, r) = nees(e, p)?;
        total += q;
        dof = dof.max(r);
    }
    Ok((total / errors.len() as f64, dof))
}

/// Two-sided 95% interval for the ANEES of `n_sims` runs with `n_dof`
/// degrees of freedom each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AneesInterval {
    pub r1: f64,
    pub r2: f64,
    pub n_sims: usize,
    pub n_dof: usize,
}

impl AneesInterval {
    pub fn contains(&self, value: f64) -> bool {
        value >= self.r1 && value <= self.r2
    }
}

const QUANTILE_RTOL: f64 = 1e-10;

/// CDF of the chi-square distribution with `dof` degrees of freedom.
pub fn chi2_cdf(x: f64, dof: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(0.5 * dof, 0.5 * x)
    }
}

/// Inverse chi-square CDF by bisection on a bracket grown from the mean.
pub fn chi2_quantile(p: f64, dof: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0 && dof > 0.0, "quantile needs 0 < p < 1 and dof > 0");
    let mut hi = dof.max(1.0);
    while chi2_cdf(hi, dof) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > QUANTILE_RTOL * hi {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(mid, dof) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn chi2_interval(n_sims: usize, n_dof: usize) -> AneesInterval {
    assert!(n_sims > 0 && n_dof > 0, "n_sims and n_dof must be positive");
    let dof = (n_sims * n_dof) as f64;
    let ns = n_sims as f64;
    AneesInterval {
        r1: chi2_quantile(0.025, dof) / ns,
        r2: chi2_quantile(0.975, dof) / ns,
        n_sims,
        n_dof,
    }
}
