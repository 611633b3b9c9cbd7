//! Matrix Lie groups used by the filters: SO(3), SE(3), SE₂(3), and a generic
//! group described by a basis of its Lie algebra.
//!
//! Tangent coordinates are ordered rotation first. For SE₂(3) this is
//! `(ξ_R, ξ_v, ξ_p)`, for SE(3) `(ξ_R, ξ_p)`. Closed forms are used for the
//! three named groups; the generic group falls back to scaling-and-squaring
//! for `exp`/`log` and to the Bernoulli series for the right Jacobian.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

/// Tangent-space coordinates ξ ∈ ℝⁿ.
pub type Tangent = DVector<f64>;

/// Below this rotation angle the trigonometric coefficients are replaced by
/// their Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-4;

/// Rotations whose angle is this close to π have no principal logarithm.
pub const NEAR_PI: f64 = 1e-6;

const ALGEBRA_TOL: f64 = 1e-9;
/// Below this angle the coupling coefficients use their Taylor expansions;
/// (different from [`SMALL_ANGLE`]).
const COUPLING_SMALL_ANGLE: f64 = 0.1;
const SERIES_TOL: f64 = 1e-14;
const SERIES_CAP: usize = 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LieError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not in the Lie algebra (residual {residual:.3e})")]
    NotInAlgebra { residual: f64 },
    #[error("matrix is not a valid group element: {0}")]
    NotInGroup(String),
    #[error("rotation angle {angle} is within {NEAR_PI:e} of pi; logarithm branch is ambiguous")]
    AngleNearPi { angle: f64 },
    #[error("non-finite coordinates")]
    NonFinite,
}

/// A matrix Lie group given by an explicit basis of its algebra.
#[derive(Debug, Clone, PartialEq)]
pub struct GenericGroup {
    size: usize,
    basis: Vec<DMatrix<f64>>,
    // pseudo-inverse of the stacked, vectorized basis; maps vec(M) to coordinates
    projector: DMatrix<f64>,
}

impl GenericGroup {
    pub fn new(basis: Vec<DMatrix<f64>>) -> Result<Self, LieError> {
        let first = basis
            .first()
            .ok_or(LieError::DimensionMismatch { expected: 1, got: 0 })?;
        let size = first.nrows();
        for b in &basis {
            if b.nrows() != size || b.ncols() != size {
                return Err(LieError::DimensionMismatch {
                    expected: size,
                    got: b.nrows().max(b.ncols()),
                });
            }
        }
        let mut stacked = DMatrix::zeros(size * size, basis.len());
        for (j, b) in basis.iter().enumerate() {
            stacked.column_mut(j).copy_from_slice(b.as_slice());
        }
        let projector = stacked
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| LieError::NotInGroup(e.to_string()))?;
        if (&projector * &stacked - DMatrix::identity(basis.len(), basis.len())).norm() > 1e-9 {
            return Err(LieError::NotInGroup("basis is linearly dependent".into()));
        }
        Ok(Self {
            size,
            basis,
            projector,
        })
    }

    /// so(3) with the standard skew-symmetric basis.
    pub fn so3() -> Self {
        Self::new((0..3).map(|i| to_dyn(&skew(&Vector3::ith(i, 1.0)))).collect())
            .expect("so(3) basis is independent")
    }

    pub fn basis(&self) -> &[DMatrix<f64>] {
        &self.basis
    }
}

/// Which group a matrix belongs to.
#[derive(Debug, Clone, PartialEq)]
pub enum GroupKind {
    So3,
    Se3,
    Se23,
    Generic(Arc<GenericGroup>),
}

impl fmt::Display for GroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupKind::So3 => write!(f, "SO(3)"),
            GroupKind::Se3 => write!(f, "SE(3)"),
            GroupKind::Se23 => write!(f, "SE2(3)"),
            GroupKind::Generic(g) => write!(f, "Generic({}x{}, dim {})", g.size, g.size, g.basis.len()),
        }
    }
}

impl GroupKind {
    /// Size N of the N×N matrices.
    pub fn matrix_size(&self) -> usize {
        match self {
            GroupKind::So3 => 3,
            GroupKind::Se3 => 4,
            GroupKind::Se23 => 5,
            GroupKind::Generic(g) => g.size,
        }
    }

    /// Dimension n of the tangent space.
    pub fn dim(&self) -> usize {
        match self {
            GroupKind::So3 => 3,
            GroupKind::Se3 => 6,
            GroupKind::Se23 => 9,
            GroupKind::Generic(g) => g.basis.len(),
        }
    }

    /// Rows of `Λ(ξ)` that can be non-zero. For the affine groups the bottom
    /// rows of every algebra element vanish, so `χd` carries no information
    /// there.
    pub fn informative_rows(&self) -> Vec<usize> {
        match self {
            GroupKind::So3 | GroupKind::Se3 | GroupKind::Se23 => (0..3).collect(),
            GroupKind::Generic(g) => (0..g.size)
                .filter(|&i| g.basis.iter().any(|b| b.row(i).iter().any(|x| *x != 0.0)))
                .collect(),
        }
    }

    pub fn identity(&self) -> GroupElement {
        GroupElement {
            kind: self.clone(),
            matrix: DMatrix::identity(self.matrix_size(), self.matrix_size()),
        }
    }

    fn check_dim(&self, xi: &Tangent) -> Result<(), LieError> {
        if xi.len() != self.dim() {
            return Err(LieError::DimensionMismatch {
                expected: self.dim(),
                got: xi.len(),
            });
        }
        Ok(())
    }

    /// The map Λ: ℝⁿ → 𝔤.
    pub fn hat(&self, xi: &Tangent) -> Result<DMatrix<f64>, LieError> {
        self.check_dim(xi)?;
        let n = self.matrix_size();
        let mut m = DMatrix::zeros(n, n);
        match self {
            GroupKind::Generic(g) => {
                for (c, b) in xi.iter().zip(&g.basis) {
                    m += b * *c;
                }
            }
            _ => {
                let w = Vector3::new(xi[0], xi[1], xi[2]);
                m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&w));
                for col in 0..(xi.len() / 3 - 1) {
                    for r in 0..3 {
                        m[(r, 3 + col)] = xi[3 + 3 * col + r];
                    }
                }
            }
        }
        Ok(m)
    }

    /// Inverse of [`hat`](Self::hat).
    pub fn vee(&self, m: &DMatrix<f64>) -> Result<Tangent, LieError> {
        let n = self.matrix_size();
        if m.nrows() != n || m.ncols() != n {
            return Err(LieError::DimensionMismatch {
                expected: n,
                got: m.nrows(),
            });
        }
        let xi = match self {
            GroupKind::Generic(g) => {
                let flat = DVector::from_column_slice(m.as_slice());
                &g.projector * flat
            }
            _ => {
                let mut xi = DVector::zeros(self.dim());
                xi[0] = m[(2, 1)];
                xi[1] = m[(0, 2)];
                xi[2] = m[(1, 0)];
                for col in 0..(self.dim() / 3 - 1) {
                    for r in 0..3 {
                        xi[3 + 3 * col + r] = m[(r, 3 + col)];
                    }
                }
                xi
            }
        };
        let residual = (self.hat(&xi)? - m).norm();
        if residual > ALGEBRA_TOL * (1.0 + m.norm()) {
            return Err(LieError::NotInAlgebra { residual });
        }
        Ok(xi)
    }

    /// exp_G(ξ) = expm(Λ(ξ)).
    pub fn exp(&self, xi: &Tangent) -> Result<GroupElement, LieError> {
        self.check_dim(xi)?;
        if xi.iter().any(|x| !x.is_finite()) {
            return Err(LieError::NonFinite);
        }
        let matrix = match self {
            GroupKind::Generic(_) => expm(&self.hat(xi)?),
            _ => {
                let phi = Vector3::new(xi[0], xi[1], xi[2]);
                let rot = so3_exp(&phi);
                let jl = so3_left_jacobian(&phi);
                let n = self.matrix_size();
                let mut m = DMatrix::identity(n, n);
                m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
                for col in 0..(xi.len() / 3 - 1) {
                    let t = jl * xi.fixed_rows::<3>(3 + 3 * col);
                    m.fixed_view_mut::<3, 1>(0, 3 + col).copy_from(&t);
                }
                m
            }
        };
        Ok(GroupElement {
            kind: self.clone(),
            matrix,
        })
    }

    /// Principal logarithm.
    pub fn log(&self, g: &GroupElement) -> Result<Tangent, LieError> {
        let n = self.matrix_size();
        if g.matrix.nrows() != n || g.matrix.ncols() != n {
            return Err(LieError::DimensionMismatch {
                expected: n,
                got: g.matrix.nrows(),
            });
        }
        match self {
            GroupKind::Generic(_) => {
                let l = logm(&g.matrix).ok_or_else(|| {
                    LieError::NotInGroup("inverse scaling and squaring did not converge".into())
                })?;
                self.vee(&l)
            }
            _ => {
                let rot: Matrix3<f64> = g.matrix.fixed_view::<3, 3>(0, 0).into_owned();
                let phi = so3_log(&rot)?;
                let jl_inv = so3_left_jacobian_inv(&phi);
                let mut xi = DVector::zeros(self.dim());
                xi.fixed_rows_mut::<3>(0).copy_from(&phi);
                for col in 0..(self.dim() / 3 - 1) {
                    let t: Vector3<f64> = g.matrix.fixed_view::<3, 1>(0, 3 + col).into_owned();
                    xi.fixed_rows_mut::<3>(3 + 3 * col).copy_from(&(jl_inv * t));
                }
                Ok(xi)
            }
        }
    }

    /// Right Jacobian 𝒥_r(ξ): `exp(ξ + δ) ≈ exp(ξ) exp(𝒥_r(ξ) δ)`.
    pub fn right_jacobian(&self, xi: &Tangent) -> Result<DMatrix<f64>, LieError> {
        self.check_dim(xi)?;
        match self {
            GroupKind::Generic(_) => self.right_jacobian_series(xi),
            _ => {
                let phi = Vector3::new(xi[0], xi[1], xi[2]);
                let jr = so3_right_jacobian(&phi);
                let blocks = self.dim() / 3;
                let mut j = DMatrix::zeros(self.dim(), self.dim());
                for b in 0..blocks {
                    j.fixed_view_mut::<3, 3>(3 * b, 3 * b).copy_from(&jr);
                }
                for b in 1..blocks {
                    let rho = Vector3::new(xi[3 * b], xi[3 * b + 1], xi[3 * b + 2]);
                    // Q_r(φ, ρ) = Q_l(−φ, −ρ)
                    let q = translation_coupling(&(-phi), &(-rho));
                    j.fixed_view_mut::<3, 3>(3 * b, 0).copy_from(&q);
                }
                Ok(j)
            }
        }
    }

    /// Left Jacobian, 𝒥_l(ξ) = 𝒥_r(−ξ).
    pub fn left_jacobian(&self, xi: &Tangent) -> Result<DMatrix<f64>, LieError> {
        self.right_jacobian(&(-xi))
    }

    /// Right Jacobian from the Bernoulli series of its inverse,
    /// `𝒥_r⁻¹(a) = Σ Bₙ/n! adₐⁿ` (with B₁ = +½), inverted numerically.
    /// Available for every group; the closed forms are checked against it.
    pub fn right_jacobian_series(&self, xi: &Tangent) -> Result<DMatrix<f64>, LieError> {
        self.check_dim(xi)?;
        let ad = self.ad(xi)?;
        let n = self.dim();
        let bern = bernoulli_numbers(SERIES_CAP);
        let mut inv = DMatrix::identity(n, n);
        let mut power = DMatrix::identity(n, n);
        let mut factorial = 1.0;
        for (k, b) in bern.iter().enumerate().skip(1) {
            power = &power * &ad;
            factorial *= k as f64;
            if *b == 0.0 {
                continue;
            }
            let term = &power * (*b / factorial);
            let small = term.norm() < SERIES_TOL;
            inv += term;
            if small {
                break;
            }
        }
        inv.try_inverse()
            .ok_or_else(|| LieError::NotInGroup("right Jacobian is singular".into()))
    }

    /// Matrix of `b ↦ vee([Λ(ξ), Λ(b)])`.
    pub fn ad(&self, xi: &Tangent) -> Result<DMatrix<f64>, LieError> {
        let a = self.hat(xi)?;
        let n = self.dim();
        let mut ad = DMatrix::zeros(n, n);
        for j in 0..n {
            let e = DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 });
            let b = self.hat(&e)?;
            let bracket = &a * &b - &b * &a;
            ad.set_column(j, &self.vee(&bracket)?);
        }
        Ok(ad)
    }

    /// Validate a raw matrix as an element of this group.
    pub fn element(&self, matrix: DMatrix<f64>) -> Result<GroupElement, LieError> {
        let n = self.matrix_size();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(LieError::DimensionMismatch {
                expected: n,
                got: matrix.nrows(),
            });
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(LieError::NonFinite);
        }
        match self {
            GroupKind::Generic(_) => {
                if matrix.determinant().abs() < 1e-12 {
                    return Err(LieError::NotInGroup("matrix is singular".into()));
                }
            }
            _ => {
                let rot: Matrix3<f64> = matrix.fixed_view::<3, 3>(0, 0).into_owned();
                let ortho = (rot.transpose() * rot - Matrix3::identity()).norm();
                if ortho > 1e-9 || (rot.determinant() - 1.0).abs() > 1e-9 {
                    return Err(LieError::NotInGroup(format!(
                        "rotation block is not in SO(3) (orthogonality residual {ortho:.3e})"
                    )));
                }
                for r in 3..n {
                    for c in 0..n {
                        let expected = if r == c { 1.0 } else { 0.0 };
                        if (matrix[(r, c)] - expected).abs() > 1e-9 {
                            return Err(LieError::NotInGroup(format!(
                                "bottom block entry ({r},{c}) is {}",
                                matrix[(r, c)]
                            )));
                        }
                    }
                }
            }
        }
        Ok(GroupElement {
            kind: self.clone(),
            matrix,
        })
    }
}

/// An element χ of a matrix Lie group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    kind: GroupKind,
    matrix: DMatrix<f64>,
}

impl GroupElement {
    pub fn new(kind: GroupKind, matrix: DMatrix<f64>) -> Result<Self, LieError> {
        kind.element(matrix)
    }

    pub fn kind(&self) -> &GroupKind {
        &self.kind
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn compose(&self, other: &GroupElement) -> GroupElement {
        GroupElement {
            kind: self.kind.clone(),
            matrix: &self.matrix * &other.matrix,
        }
    }

    pub fn inverse(&self) -> GroupElement {
        let matrix = match self.kind {
            GroupKind::Generic(_) => self
                .matrix
                .clone()
                .try_inverse()
                .expect("group elements are invertible"),
            _ => {
                let n = self.matrix.nrows();
                let rt: Matrix3<f64> = self.matrix.fixed_view::<3, 3>(0, 0).transpose();
                let mut m = DMatrix::identity(n, n);
                m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
                for c in 3..n {
                    let t: Vector3<f64> = self.matrix.fixed_view::<3, 1>(0, c).into_owned();
                    m.fixed_view_mut::<3, 1>(0, c).copy_from(&(-(rt * t)));
                }
                m
            }
        };
        GroupElement {
            kind: self.kind.clone(),
            matrix,
        }
    }

    /// Group action on ℝᴺ: `χ d`.
    pub fn act(&self, d: &DVector<f64>) -> Result<DVector<f64>, LieError> {
        if d.len() != self.matrix.ncols() {
            return Err(LieError::DimensionMismatch {
                expected: self.matrix.ncols(),
                got: d.len(),
            });
        }
        Ok(&self.matrix * d)
    }

    /// `χ exp(ξ)`.
    pub fn retract(&self, xi: &Tangent) -> Result<GroupElement, LieError> {
        Ok(self.compose(&self.kind.exp(xi)?))
    }

    /// Upper-left 3×3 block, for the groups that have one.
    pub fn rotation(&self) -> Option<Matrix3<f64>> {
        match self.kind {
            GroupKind::Generic(_) => None,
            _ => Some(self.matrix.fixed_view::<3, 3>(0, 0).into_owned()),
        }
    }
}

/// Skew-symmetric matrix `(w)_×`.
/// Copies a 3×3 matrix into a dynamically sized one.
pub fn to_dyn(m: &Matrix3<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(3, 3, m.as_slice())
}

pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

// sin θ/θ, (1−cos θ)/θ², (θ−sin θ)/θ³
fn so3_coefficients(theta: f64) -> (f64, f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        (
            1.0 - t2 / 6.0 + t4 / 120.0,
            0.5 - t2 / 24.0 + t4 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0,
        )
    } else {
        let s = theta.sin();
        let t2 = theta * theta;
        let half = (0.5 * theta).sin();
        (s / theta, 2.0 * half * half / t2, (theta - s) / (t2 * theta))
    }
}

/// Rodrigues' formula.
pub fn so3_exp(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let (a, b, _) = so3_coefficients(theta);
    let k = skew(phi);
    Matrix3::identity() + k * a + k * k * b
}

/// Principal logarithm on SO(3).
pub fn so3_log(rot: &Matrix3<f64>) -> Result<Vector3<f64>, LieError> {
    let axis = Vector3::new(
        rot[(2, 1)] - rot[(1, 2)],
        rot[(0, 2)] - rot[(2, 0)],
        rot[(1, 0)] - rot[(0, 1)],
    );
    let cos = 0.5 * (rot.trace() - 1.0);
    let sin = 0.5 * axis.norm();
    let theta = sin.atan2(cos);
    if PI - theta < NEAR_PI {
        return Err(LieError::AngleNearPi { angle: theta });
    }
    let factor = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        0.5 + t2 / 12.0 + 7.0 * t2 * t2 / 720.0
    } else {
        0.5 * theta / theta.sin()
    };
    Ok(axis * factor)
}

pub fn so3_right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let (_, b, c) = so3_coefficients(phi.norm());
    let k = skew(phi);
    Matrix3::identity() - k * b + k * k * c
}

pub fn so3_left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    so3_right_jacobian(&(-phi))
}

pub fn so3_left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let coeff = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    let k = skew(phi);
    Matrix3::identity() - k * 0.5 + k * k * coeff
}

// Off-diagonal block Q_l(φ, ρ) of the left Jacobian of SE(3)-like groups.
fn translation_coupling(phi: &Vector3<f64>, rho: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let (c1, c2, c3) = if theta < COUPLING_SMALL_ANGLE {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        let t6 = t4 * t2;
        let t8 = t4 * t4;
        (
            1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0 - t6 / 362_880.0 + t8 / 39_916_800.0,
            1.0 / 24.0 - t2 / 720.0 + t4 / 40320.0 - t6 / 3_628_800.0 + t8 / 479_001_600.0,
            1.0 / 120.0 - t2 / 2520.0 + t4 / 120_960.0 - t6 / 9_979_200.0 + t8 / 1_245_404_160.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t2 = theta * theta;
        (
            (theta - s) / (t2 * theta),
            (t2 + 2.0 * c - 2.0) / (2.0 * t2 * t2),
            (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t2 * t2 * theta),
        )
    };
    let p = skew(phi);
    let r = skew(rho);
    let prp = p * r * p;
    r * 0.5 + (p * r + r * p + prp) * c1 + (p * p * r + r * p * p - prp * 3.0) * c2
        + (prp * p + p * prp) * c3
}

/// Bernoulli numbers B₀..B_{n-1} with the B₁ = +½ convention.
pub fn bernoulli_numbers(n: usize) -> Vec<f64> {
    let mut b = vec![0.0; n.max(1)];
    b[0] = 1.0;
    for m in 1..n {
        // Σ_{k=0}^{m} C(m+1, k) B_k = 0 gives B_m with B₁ = −½
        let mut acc = 0.0;
        let mut binom = 1.0;
        for (k, bk) in b.iter().enumerate().take(m) {
            acc += binom * bk;
            binom *= (m + 1 - k) as f64 / (k + 1) as f64;
        }
        b[m] = -acc / (m + 1) as f64;
    }
    for bm in b.iter_mut().skip(3).step_by(2) {
        *bm = 0.0;
    }
    if n > 1 {
        b[1] = 0.5;
    }
    b
}

/// Matrix exponential by scaling and squaring with a Taylor core.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.norm();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings);
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=30 {
        term = &term * &scaled / k as f64;
        result += &term;
        if term.norm() < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Principal matrix logarithm by inverse scaling and squaring
/// (Denman–Beavers square roots, then a Gregory series).
pub fn logm(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let mut x = m.clone();
    let mut roots = 0;
    while (&x - &id).norm() > 0.1 {
        if roots > 60 {
            return None;
        }
        let mut y = x.clone();
        let mut z = id.clone();
        for _ in 0..100 {
            let y_inv = y.clone().try_inverse()?;
            let z_inv = z.clone().try_inverse()?;
            let y_next = (&y + &z_inv) * 0.5;
            let z_next = (&z + &y_inv) * 0.5;
            let delta = (&y_next - &y).norm();
            y = y_next;
            z = z_next;
            if delta < 1e-15 * (1.0 + y.norm()) {
                break;
            }
        }
        x = y;
        roots += 1;
    }
    // log(X) = 2 artanh(S), S = (X − I)(X + I)⁻¹
    let s = (&x - &id) * (&x + &id).try_inverse()?;
    let s2 = &s * &s;
    let mut term = s.clone();
    let mut acc = s.clone();
    for k in 1..60 {
        term = &term * &s2;
        let add = &term / (2 * k + 1) as f64;
        acc += &add;
        if add.norm() < 1e-18 {
            break;
        }
    }
    Some(acc * 2.0 * 2f64.powi(roots))
}
