#![allow(dead_code)]

use iiekf::lie::{GroupElement, GroupKind};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(x)
}

pub fn gaussian<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Uniform direction with norm uniform in `[0, max_norm]`.
pub fn tangent<R: Rng>(rng: &mut R, n: usize, max_norm: f64) -> DVector<f64> {
    let g = gaussian(rng, n);
    let r = rng.random_range(0.0..max_norm);
    g.normalize() * r
}

/// Tangent whose rotation part has norm below `max_rot` and whose translation
/// parts have entries of size at most `max_trans`.
pub fn pose_tangent<R: Rng>(rng: &mut R, kind: &GroupKind, max_rot: f64, max_trans: f64) -> DVector<f64> {
    let mut xi = DVector::zeros(kind.dim());
    let rot = tangent(rng, 3, max_rot);
    xi.rows_mut(0, 3).copy_from(&rot);
    for i in 3..kind.dim() {
        xi[i] = rng.random_range(-max_trans..max_trans);
    }
    xi
}

pub fn random_element<R: Rng>(rng: &mut R, kind: &GroupKind) -> GroupElement {
    let xi = pose_tangent(rng, kind, 3.0, 5.0);
    kind.exp(&xi).unwrap()
}

/// Well-conditioned SPD matrix `A Aᵀ + εI`.
pub fn spd<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1
}

pub fn random_matrix<R: Rng>(rng: &mut R, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Observed convergence order of `err(h)` when `h` is halved.
pub fn observed_order(err: impl Fn(f64) -> f64, h: f64) -> f64 {
    (err(h) / err(h / 2.0)).log2()
}
