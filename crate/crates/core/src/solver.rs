//! Systems of equations `χ dⱼ = yⱼ` on a matrix Lie group (and `Hⱼ x = yⱼ` in
//! ℝⁿ), solved by feeding each equation to a noise-free filter update.
//!
//! Convergence is local: the initial guess must lie close enough to a
//! solution. [`max_initial_error`] reports the largest innovation norm so
//! callers can flag suspicious starts.

use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{self, Belief, GainMode};
use crate::filters::{self, FilterError, GnConfig, UpdateReport};
use crate::lie::{GroupElement, GroupKind, LieError};

/// Residual above which an earlier equation counts as broken.
pub const INCONSISTENCY_TOL: f64 = 1e-6;
/// First-innovation norm above which a warning is logged.
pub const INITIAL_ERROR_ADVISORY: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("Gauss-Newton did not converge on equation {0}")]
    NotConverged(usize),
    #[error("inconsistent system: equation {equation} has residual {residual:.3e} after processing equation {after}")]
    InconsistentSystem {
        equation: usize,
        after: usize,
        residual: f64,
    },
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error("invalid system: {0}")]
    Invalid(String),
}

impl SolverError {
    pub fn is_inconsistent(&self) -> bool {
        matches!(self, SolverError::InconsistentSystem { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquationForm {
    /// `χ d = y`
    #[default]
    Left,
    /// `χ⁻¹ d = y`
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquationSystem {
    pub group: GroupKind,
    pub equations: Vec<(DVector<f64>, DVector<f64>)>,
    pub form: EquationForm,
}

impl EquationSystem {
    pub fn new(group: GroupKind, equations: Vec<(DVector<f64>, DVector<f64>)>, form: EquationForm) -> Self {
        Self { group, equations, form }
    }

    /// Equations in the `χ d = y` form.
    pub fn left_form(&self) -> Vec<(DVector<f64>, DVector<f64>)> {
        match self.form {
            EquationForm::Left => self.equations.clone(),
            EquationForm::Right => self.equations.iter().map(|(d, y)| (y.clone(), d.clone())).collect(),
        }
    }

    fn validate(&self) -> Result<(), SolverError> {
        let n = self.group.matrix_size();
        for (j, (d, y)) in self.equations.iter().enumerate() {
            if d.len() != n || y.len() != n {
                return Err(SolverError::Invalid(format!(
                    "equation {j}: expected vectors of length {n}, got {} and {}",
                    d.len(),
                    y.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub solution: GroupElement,
    /// `‖χ dⱼ − yⱼ‖` for every equation, in `χ d = y` form.
    pub residuals: Vec<f64>,
    pub final_rank: usize,
    /// rank(P) before any update, then after each equation.
    pub rank_trace: Vec<usize>,
    pub reports: Vec<UpdateReport>,
}

fn residuals(x: &GroupElement, equations: &[(DVector<f64>, DVector<f64>)]) -> Result<Vec<f64>, LieError> {
    equations.iter().map(|(d, y)| Ok((x.act(d)? - y).norm())).collect()
}

/// Largest innovation norm `‖χ̂⁻¹yⱼ − dⱼ‖` over the equations.
pub fn max_initial_error(system: &EquationSystem, initial: &GroupElement) -> Result<f64, SolverError> {
    let eqs = system.left_form();
    let inv = initial.inverse();
    let mut worst: f64 = 0.0;
    for (d, y) in &eqs {
        worst = worst.max((inv.act(y)? - d).norm());
    }
    Ok(worst)
}

/// Sequential noise-free IIEKF updates, one per equation, with no propagation
/// in between. `p0` should be full rank.
pub fn solve(
    system: &EquationSystem,
    initial: &GroupElement,
    p0: &DMatrix<f64>,
    cfg: &GnConfig,
) -> Result<SolveResult, SolverError> {
    system.validate()?;
    if initial.kind() != &system.group {
        return Err(SolverError::Invalid(format!(
            "initial estimate is on {}, system is on {}",
            initial.kind(),
            system.group
        )));
    }
    let eqs = system.left_form();
    let worst = max_initial_error(system, initial)?;
    if worst > INITIAL_ERROR_ADVISORY {
        warn!("initial innovation norm {worst:.3} is large; the solver may not converge");
    }

    let mut state = Belief::new(initial.clone(), p0.clone());
    let scale = p0.norm();
    let mut rank_trace = vec![belief::rank_scaled(&state.cov, scale)];
    let mut reports = Vec::with_capacity(eqs.len());
    for (j, (d, y)) in eqs.iter().enumerate() {
        let (next, report) = filters::iiekf_update_noise_free(&state, d, y, cfg)?;
        if !report.converged {
            return Err(SolverError::NotConverged(j));
        }
        state = next;
        for (i, r) in residuals(&state.mean, &eqs[..=j])?.into_iter().enumerate() {
            if r > INCONSISTENCY_TOL {
                return Err(SolverError::InconsistentSystem {
                    equation: i,
                    after: j,
                    residual: r,
                });
            }
        }
        rank_trace.push(belief::rank_scaled(&state.cov, scale));
        reports.push(report);
    }

    Ok(SolveResult {
        residuals: residuals(&state.mean, &eqs)?,
        final_rank: *rank_trace.last().unwrap_or(&0),
        rank_trace,
        reports,
        solution: state.mean,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSolveResult {
    pub solution: DVector<f64>,
    pub residuals: Vec<f64>,
    pub rank_trace: Vec<usize>,
}

/// Sequential noise-free KF updates on `Hⱼ x = yⱼ`.
pub fn solve_linear(
    equations: &[(DMatrix<f64>, DVector<f64>)],
    initial: &DVector<f64>,
    p0: &DMatrix<f64>,
) -> Result<LinearSolveResult, SolverError> {
    let mut state = Belief::new(initial.clone(), p0.clone());
    let scale = p0.norm();
    let mut rank_trace = vec![belief::rank_scaled(&state.cov, scale)];
    let resid = |x: &DVector<f64>, eqs: &[(DMatrix<f64>, DVector<f64>)]| -> Vec<f64> {
        eqs.iter().map(|(h, y)| (h * x - y).norm()).collect()
    };
    for (j, (h, y)) in equations.iter().enumerate() {
        let noise = DMatrix::zeros(y.len(), y.len());
        let (next, _) = filters::kf_update(&state, h, y, &noise, GainMode::NoiseFree)?;
        state = next;
        for (i, r) in resid(&state.mean, &equations[..=j]).into_iter().enumerate() {
            if r > INCONSISTENCY_TOL {
                return Err(SolverError::InconsistentSystem {
                    equation: i,
                    after: j,
                    residual: r,
                });
            }
        }
        rank_trace.push(belief::rank_scaled(&state.cov, scale));
    }
    Ok(LinearSolveResult {
        residuals: resid(&state.mean, equations),
        solution: state.mean,
        rank_trace,
    })
}

/// On-disk description of a system, in TOML.
///
/// ```toml
/// group = "so3"          # so3 | se3 | se23 | linear
/// form = "left"          # left | right
/// initial = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
/// p0_scale = 1.0
///
/// [[equations]]
/// d = [1.0, 0.0, 0.0]
/// y = [0.9, 0.1, 0.0]
/// ```
///
/// For `group = "linear"` each equation has a row `h` and a one-entry `y`,
/// and `initial` is a single row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub group: String,
    #[serde(default)]
    pub form: EquationForm,
    #[serde(default)]
    pub initial: Option<Vec<Vec<f64>>>,
    #[serde(default = "one")]
    pub p0_scale: f64,
    pub equations: Vec<EquationEntry>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquationEntry {
    #[serde(default)]
    pub d: Option<Vec<f64>>,
    #[serde(default)]
    pub h: Option<Vec<f64>>,
    pub y: Vec<f64>,
}

/// A parsed [`SystemFile`].
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedSystem {
    Group {
        system: EquationSystem,
        initial: GroupElement,
        p0: DMatrix<f64>,
    },
    Linear {
        equations: Vec<(DMatrix<f64>, DVector<f64>)>,
        initial: DVector<f64>,
        p0: DMatrix<f64>,
    },
}

pub fn parse_group(name: &str) -> Option<GroupKind> {
    match name.to_ascii_lowercase().as_str() {
        "so3" => Some(GroupKind::So3),
        "se3" => Some(GroupKind::Se3),
        "se23" => Some(GroupKind::Se23),
        _ => None,
    }
}

impl SystemFile {
    pub fn from_toml(text: &str) -> Result<Self, SolverError> {
        toml::from_str(text).map_err(|e| SolverError::Invalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SolverError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SolverError::Invalid(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn build(&self) -> Result<LoadedSystem, SolverError> {
        if !(self.p0_scale > 0.0 && self.p0_scale.is_finite()) {
            return Err(SolverError::Invalid("p0_scale must be positive".into()));
        }
        if self.group.eq_ignore_ascii_case("linear") {
            return self.build_linear();
        }
        let group = parse_group(&self.group)
            .ok_or_else(|| SolverError::Invalid(format!("unknown group {:?}", self.group)))?;
        let equations = self
            .equations
            .iter()
            .enumerate()
            .map(|(j, e)| match (&e.d, &e.h) {
                (Some(d), None) => Ok((DVector::from_vec(d.clone()), DVector::from_vec(e.y.clone()))),
                _ => Err(SolverError::Invalid(format!("equation {j}: group equations need `d` and `y`"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let initial = match &self.initial {
            None => group.identity(),
            Some(rows) => group.element(matrix_from_rows(rows)?)?,
        };
        let n = group.dim();
        let system = EquationSystem::new(group, equations, self.form);
        system.validate()?;
        Ok(LoadedSystem::Group {
            system,
            initial,
            p0: DMatrix::identity(n, n) * self.p0_scale,
        })
    }

    fn build_linear(&self) -> Result<LoadedSystem, SolverError> {
        let n = self
            .equations
            .first()
            .and_then(|e| e.h.as_ref())
            .map(Vec::len)
            .ok_or_else(|| SolverError::Invalid("linear systems need at least one equation with `h`".into()))?;
        let mut equations = Vec::with_capacity(self.equations.len());
        for (j, e) in self.equations.iter().enumerate() {
            match (&e.h, &e.d) {
                (Some(h), None) if h.len() == n && e.y.len() == 1 => {
                    equations.push((DMatrix::from_row_slice(1, n, h), DVector::from_vec(e.y.clone())));
                }
                _ => {
                    return Err(SolverError::Invalid(format!(
                        "equation {j}: linear equations need `h` of length {n} and a one-entry `y`"
                    )))
                }
            }
        }
        let initial = match &self.initial {
            None => DVector::zeros(n),
            Some(rows) if rows.len() == 1 && rows[0].len() == n => DVector::from_vec(rows[0].clone()),
            Some(_) => return Err(SolverError::Invalid(format!("initial must be one row of length {n}"))),
        };
        Ok(LoadedSystem::Linear {
            equations,
            initial,
            p0: DMatrix::identity(n, n) * self.p0_scale,
        })
    }
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, SolverError> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(SolverError::Invalid("initial must be a square matrix".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn trivial_so3() {
        let sys = EquationSystem::new(GroupKind::So3, vec![(v(&[0., 0., 1.]), v(&[0., 0., 1.]))], EquationForm::Left);
        let out = solve(&sys, &GroupKind::So3.identity(), &DMatrix::identity(3, 3), &GnConfig::default()).unwrap();
        assert_eq!(out.solution, GroupKind::So3.identity());
        assert_eq!(out.reports[0].iterations, 1);
        assert_eq!(out.rank_trace, vec![3, 1]);
    }

    #[test]
    fn right_form_is_swapped() {
        let sys = EquationSystem::new(GroupKind::So3, vec![(v(&[1., 0., 0.]), v(&[0., 1., 0.]))], EquationForm::Right);
        assert_eq!(sys.left_form(), vec![(v(&[0., 1., 0.]), v(&[1., 0., 0.]))]);
    }

    #[test]
    fn underdetermined_linear_is_minimum_norm() {
        let h = DMatrix::from_row_slice(1, 3, &[1., 2., -2.]);
        let y = v(&[3.0]);
        let out = solve_linear(&[(h.clone(), y.clone())], &DVector::zeros(3), &DMatrix::identity(3, 3)).unwrap();
        let expected = h.transpose() * (&h * h.transpose()).try_inverse().unwrap() * y;
        assert_relative_eq!(out.solution, expected, epsilon = 1e-12);
        assert_eq!(out.rank_trace, vec![3, 2]);
    }

    #[test]
    fn inconsistent_linear() {
        let h = DMatrix::from_row_slice(1, 2, &[1., 1.]);
        let eqs = [(h.clone(), v(&[1.0])), (h, v(&[2.0]))];
        let err = solve_linear(&eqs, &DVector::zeros(2), &DMatrix::identity(2, 2)).unwrap_err();
        assert!(err.is_inconsistent());
    }

    #[test]
    fn system_file_parsing() {
        let text = r#"
group = "linear"
[[equations]]
h = [1.0, 0.0]
y = [2.0]
[[equations]]
h = [0.0, 1.0]
y = [3.0]
"#;
        let LoadedSystem::Linear { equations, initial, .. } = SystemFile::from_toml(text).unwrap().build().unwrap() else {
            panic!("expected a linear system");
        };
        assert_eq!(equations.len(), 2);
        assert_eq!(initial, DVector::zeros(2));

        let bad = "group = \"so3\"\n[[equations]]\nd = [1.0, 0.0]\ny = [1.0, 0.0]\n";
        assert!(SystemFile::from_toml(bad).unwrap().build().is_err());
        assert!(SystemFile::from_toml("group = \"so3\"\nbogus = 1\nequations = []").is_err());
    }
}
