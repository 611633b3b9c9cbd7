//! Monte Carlo comparison of the EKF, IterEKF, IEKF and IIEKF on the crane
//! scenarios, with CSV/JSON output.
//!
//! Simulation `n` draws all of its randomness from a ChaCha stream seeded with
//! `seed + n`: first the initial error, then the IMU noise, then the
//! measurement noise. The four filters of a simulation see the same draws.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{self, Belief, CovFactor};
use crate::crane::{
    self, CableMeasurement, CraneError, EkfProcess, ExtendedPose, IekfProcess, ImuSample, ScenarioConfig, Truth,
};
use crate::filters::{self, GnConfig, UpdateReport};
use crate::lie::GroupElement;
use crate::metrics::{self, chi2_interval, ErrorRecord};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] CraneError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

impl BenchError {
    pub fn is_config(&self) -> bool {
        matches!(self, BenchError::Config(_))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterId {
    Ekf,
    IterEkf,
    Iekf,
    Iiekf,
}

impl FilterId {
    pub const ALL: [FilterId; 4] = [FilterId::Ekf, FilterId::IterEkf, FilterId::Iekf, FilterId::Iiekf];

    pub fn name(self) -> &'static str {
        match self {
            FilterId::Ekf => "ekf",
            FilterId::IterEkf => "iterekf",
            FilterId::Iekf => "iekf",
            FilterId::Iiekf => "iiekf",
        }
    }
}

/// Outcome of one filter at one time step of one simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// `‖log(χ̂⁺⁻¹ χ)‖`; NaN once diverged.
    pub error_norm: f64,
    /// NEES in the filter's own error coordinates; NaN if undefined.
    pub nees: f64,
    pub n_dof: usize,
    pub iterations: usize,
    pub converged: bool,
    pub diverged: bool,
}

impl StepRecord {
    fn diverged() -> Self {
        Self {
            error_norm: f64::NAN,
            nees: f64::NAN,
            n_dof: 0,
            iterations: 0,
            converged: false,
            diverged: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub sim: usize,
    /// Indexed like [`FilterId::ALL`].
    pub filters: [Vec<StepRecord>; 4],
}

/// Noisy inputs of one simulation.
#[derive(Debug, Clone)]
pub struct SimulationInputs {
    pub initial_estimate: GroupElement,
    pub imu: Vec<ImuSample>,
    pub measurements: Vec<Vector3<f64>>,
}

struct Shared {
    cfg: ScenarioConfig,
    truth: Truth,
    truth_groups: Vec<GroupElement>,
    imu_exact: Vec<ImuSample>,
    p0_factor: CovFactor,
    q_factor: CovFactor,
    n_factor: CovFactor,
}

impl Shared {
    fn new(cfg: &ScenarioConfig) -> Result<Self, BenchError> {
        cfg.validate()?;
        let truth = crane::simulate_truth(cfg)?;
        let imu_exact = crane::imu_from_truth(&truth.poses, truth.dt, &cfg.gravity());
        let factor = |m: &DMatrix<f64>| belief::factor(m).map_err(|e| CraneError::Config(e.to_string()));
        Ok(Self {
            truth_groups: truth.poses.iter().map(ExtendedPose::to_group).collect(),
            p0_factor: factor(&cfg.p0)?,
            q_factor: factor(&cfg.q)?,
            n_factor: factor(&cfg.n)?,
            cfg: cfg.clone(),
            truth,
            imu_exact,
        })
    }

    fn inputs(&self, sim: usize) -> SimulationInputs {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed.wrapping_add(sim as u64));
        let xi0 = self.p0_factor.sample(&mut rng);
        let initial_estimate = self.truth_groups[0]
            .retract(&(-xi0))
            .expect("SE2(3) tangent has 9 entries");
        let imu = self
            .imu_exact
            .iter()
            .map(|s| crane::add_imu_noise(s, &self.q_factor, &mut rng))
            .collect();
        let measurements = self
            .truth
            .poses
            .iter()
            .zip(&self.truth.lengths)
            .map(|(pose, &l)| crane::measure(pose, l, &self.n_factor, &mut rng))
            .collect();
        SimulationInputs {
            initial_estimate,
            imu,
            measurements,
        }
    }

    fn gn(&self, filter: FilterId) -> GnConfig {
        let cfg = GnConfig {
            tol: self.cfg.tol,
            n_max: self.cfg.n_max,
            gain_mode: self.cfg.gain_mode,
            record_iterates: false,
        };
        match filter {
            FilterId::Ekf | FilterId::Iekf => cfg.single_step(),
            FilterId::IterEkf | FilterId::Iiekf => cfg,
        }
    }

    fn record(
        &self,
        k: usize,
        est: &GroupElement,
        ekf_err: Option<DVector<f64>>,
        cov: &DMatrix<f64>,
        rep: &UpdateReport,
    ) -> StepRecord {
        let truth = &self.truth_groups[k];
        let Ok(xi) = metrics::invariant_error(est, truth) else {
            return StepRecord::diverged();
        };
        let err = ekf_err.unwrap_or_else(|| xi.clone());
        let (nees, n_dof) = metrics::nees(&err, cov).unwrap_or((f64::NAN, 0));
        let error_norm = xi.norm();
        if !error_norm.is_finite() {
            return StepRecord::diverged();
        }
        StepRecord {
            error_norm,
            nees,
            n_dof,
            iterations: rep.iterations,
            converged: rep.converged,
            diverged: false,
        }
    }

    fn run_ekf(&self, filter: FilterId, inputs: &SimulationInputs) -> Vec<StepRecord> {
        let steps = self.truth.poses.len();
        let gn = self.gn(filter);
        let process = EkfProcess {
            q: self.cfg.q.clone(),
            gravity: self.cfg.gravity(),
        };
        let mut state = Belief::new(ExtendedPose::from_group(&inputs.initial_estimate), self.cfg.p0.clone());
        let mut out = Vec::with_capacity(steps);
        for k in 0..steps {
            let meas = CableMeasurement {
                l: self.truth.lengths[k],
                noise: self.cfg.n.clone(),
            };
            let y = DVector::from_column_slice(inputs.measurements[k].as_slice());
            let updated = match filters::iterekf_update(&state, &meas, &y, &gn) {
                Ok(u) if crane::pose_is_finite(&u.0.mean) => u,
                other => {
                    debug!("{} diverged at k = {k}: {:?}", filter.name(), other.err());
                    out.resize(steps, StepRecord::diverged());
                    return out;
                }
            };
            let (post, rep) = updated;
            let ekf_err = metrics::ekf_error(&post.mean, &self.truth.poses[k])
                .unwrap_or_else(|_| DVector::from_element(9, f64::NAN));
            let rec = self.record(k, &post.mean.to_group(), Some(ekf_err), &post.cov, &rep);
            out.push(rec);
            if rec.diverged {
                out.resize(steps, StepRecord::diverged());
                return out;
            }
            if k + 1 < steps {
                state = filters::ekf_predict(&post, &process, &inputs.imu[k]);
            }
        }
        out
    }

    fn run_invariant(&self, filter: FilterId, inputs: &SimulationInputs) -> Vec<StepRecord> {
        let steps = self.truth.poses.len();
        let gn = self.gn(filter);
        let process = IekfProcess {
            q: self.cfg.q.clone(),
            gravity: self.cfg.gravity(),
        };
        let mut state = Belief::new(inputs.initial_estimate.clone(), self.cfg.p0.clone());
        let mut out = Vec::with_capacity(steps);
        for k in 0..steps {
            let meas = crane::invariant_measurement(&inputs.measurements[k], self.truth.lengths[k], &self.cfg.n);
            let (post, rep) = match filters::iiekf_update(&state, &meas, &gn) {
                Ok(u) => u,
                Err(e) => {
                    debug!("{} diverged at k = {k}: {e}", filter.name());
                    out.resize(steps, StepRecord::diverged());
                    return out;
                }
            };
            let rec = self.record(k, &post.mean, None, &post.cov, &rep);
            out.push(rec);
            if rec.diverged {
                out.resize(steps, StepRecord::diverged());
                return out;
            }
            if k + 1 < steps {
                state = filters::iekf_predict(&post, &process, &inputs.imu[k]);
            }
        }
        out
    }

    fn run(&self, sim: usize) -> SimulationRun {
        let inputs = self.inputs(sim);
        SimulationRun {
            sim,
            filters: FilterId::ALL.map(|f| match f {
                FilterId::Ekf | FilterId::IterEkf => self.run_ekf(f, &inputs),
                FilterId::Iekf | FilterId::Iiekf => self.run_invariant(f, &inputs),
            }),
        }
    }
}

/// Inputs drawn for simulation `sim` of `cfg`.
pub fn simulation_inputs(cfg: &ScenarioConfig, sim: usize) -> Result<SimulationInputs, BenchError> {
    Ok(Shared::new(cfg)?.inputs(sim))
}

/// Per-time-step statistics of one filter over all non-diverged runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepAggregate {
    pub k: usize,
    pub mean_err: f64,
    pub std_err: f64,
    pub anees: f64,
    pub r1: f64,
    pub r2: f64,
    pub mean_iters: f64,
    /// Degrees of freedom behind `anees`, `r1` and `r2`.
    pub n_dof: usize,
    pub n_valid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub filter: FilterId,
    /// Mean GN iterations per update over all non-diverged updates.
    pub mean_iterations: f64,
    pub final_mean_error: f64,
    pub final_std_error: f64,
    pub n_diverged: usize,
    /// Fraction of time steps after the first tenth of the horizon whose
    /// ANEES lies in `[r1, r2]`.
    pub anees_within: f64,
    /// Same, for ANEES above `r2`.
    pub anees_above: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario_id: u8,
    pub n_sims: usize,
    pub steps: usize,
    pub seed: u64,
    pub filters: Vec<FilterSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub config: ScenarioConfig,
    pub runs: Vec<SimulationRun>,
    /// Indexed like [`FilterId::ALL`].
    pub aggregates: [Vec<StepAggregate>; 4],
    pub summary: ScenarioSummary,
}

impl ScenarioResult {
    pub fn aggregate(&self, f: FilterId) -> &[StepAggregate] {
        &self.aggregates[index(f)]
    }

    pub fn filter_summary(&self, f: FilterId) -> &FilterSummary {
        &self.summary.filters[index(f)]
    }
}

fn index(f: FilterId) -> usize {
    FilterId::ALL.iter().position(|g| *g == f).expect("filter id is listed")
}

fn aggregate(runs: &[SimulationRun], fi: usize, steps: usize) -> Vec<StepAggregate> {
    (0..steps)
        .map(|k| {
            let recs: Vec<&StepRecord> = runs.iter().map(|r| &r.filters[fi][k]).filter(|r| !r.diverged).collect();
            let n = recs.len();
            let nan_if_empty = |v: f64| if n == 0 { f64::NAN } else { v };
            let mean_err = nan_if_empty(recs.iter().map(|r| r.error_norm).sum::<f64>() / n as f64);
            let var = nan_if_empty(recs.iter().map(|r| (r.error_norm - mean_err).powi(2)).sum::<f64>() / n as f64);
            let mean_iters = nan_if_empty(recs.iter().map(|r| r.iterations as f64).sum::<f64>() / n as f64);
            let with_nees: Vec<&&StepRecord> = recs.iter().filter(|r| r.nees.is_finite()).collect();
            let n_dof = with_nees.iter().map(|r| r.n_dof).max().unwrap_or(0);
            let (anees, r1, r2) = if with_nees.is_empty() || n_dof == 0 {
                (f64::NAN, f64::NAN, f64::NAN)
            } else {
                let anees = with_nees.iter().map(|r| r.nees).sum::<f64>() / with_nees.len() as f64;
                let interval = chi2_interval(with_nees.len(), n_dof);
                (anees, interval.r1, interval.r2)
            };
            StepAggregate {
                k,
                mean_err,
                std_err: var.sqrt(),
                anees,
                n_dof,
                r1,
                r2,
                mean_iters,
                n_valid: n,
            }
        })
        .collect()
}

fn summarize(f: FilterId, runs: &[SimulationRun], agg: &[StepAggregate]) -> FilterSummary {
    let fi = index(f);
    let (mut iters, mut updates) = (0usize, 0usize);
    for r in runs {
        for s in r.filters[fi].iter().filter(|s| !s.diverged) {
            iters += s.iterations;
            updates += 1;
        }
    }
    let n_diverged = runs.iter().filter(|r| r.filters[fi].iter().any(|s| s.diverged)).count();
    let start = agg.len().div_ceil(10);
    let tail = &agg[start.min(agg.len())..];
    let frac = |pred: &dyn Fn(&StepAggregate) -> bool| {
        if tail.is_empty() {
            f64::NAN
        } else {
            tail.iter().filter(|a| pred(a)).count() as f64 / tail.len() as f64
        }
    };
    let last = agg.last();
    FilterSummary {
        filter: f,
        mean_iterations: if updates == 0 { f64::NAN } else { iters as f64 / updates as f64 },
        final_mean_error: last.map_or(f64::NAN, |a| a.mean_err),
        final_std_error: last.map_or(f64::NAN, |a| a.std_err),
        n_diverged,
        anees_within: frac(&|a| a.anees >= a.r1 && a.anees <= a.r2),
        anees_above: frac(&|a| a.anees > a.r2),
    }
}

/// Runs all simulations of `cfg`. `workers = None` uses every available core;
/// the result does not depend on the worker count.
pub fn run_monte_carlo(cfg: &ScenarioConfig, workers: Option<usize>) -> Result<ScenarioResult, BenchError> {
    let shared = Shared::new(cfg)?;
    let steps = shared.truth.poses.len();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder.build().map_err(|e| BenchError::Pool(e.to_string()))?;
    let mut runs: Vec<SimulationRun> = pool.install(|| (0..cfg.n_sims).into_par_iter().map(|n| shared.run(n)).collect());
    runs.sort_by_key(|r| r.sim);

    let aggregates: [Vec<StepAggregate>; 4] = std::array::from_fn(|fi| aggregate(&runs, fi, steps));
    let filters = FilterId::ALL
        .iter()
        .map(|&f| summarize(f, &runs, &aggregates[index(f)]))
        .collect();
    Ok(ScenarioResult {
        config: cfg.clone(),
        summary: ScenarioSummary {
            scenario_id: cfg.scenario_id,
            n_sims: cfg.n_sims,
            steps,
            seed: cfg.seed,
            filters,
        },
        runs,
        aggregates,
    })
}

/// Files written by [`run_scenario`] plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario_id: u8,
    pub seed: u64,
    pub n_sims: usize,
    pub version: String,
    pub config: String,
    /// Output file names relative to the output directory, keyed by role.
    pub outputs: BTreeMap<String, String>,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
}

/// Writes the per-filter aggregate CSVs, the per-run CSV and the summary JSON.
/// Returns a map from role to file name.
pub fn write_outputs(result: &ScenarioResult, out_dir: &Path) -> Result<BTreeMap<String, String>, BenchError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let id = result.config.scenario_id;
    let mut outputs = BTreeMap::new();
    for f in FilterId::ALL {
        let name = format!("scenario{id}_{}.csv", f.name());
        let mut w = csv::Writer::from_path(out_dir.join(&name))?;
        for row in result.aggregate(f) {
            w.serialize(row)?;
        }
        w.flush().map_err(io_err(&out_dir.join(&name)))?;
        outputs.insert(f.name().to_string(), name);
    }

    let runs_name = format!("scenario{id}_runs.csv");
    let mut w = csv::Writer::from_path(out_dir.join(&runs_name))?;
    for run in &result.runs {
        for (fi, f) in FilterId::ALL.iter().enumerate() {
            for (k, s) in run.filters[fi].iter().enumerate() {
                w.serialize(ErrorRecord {
                    scenario: id,
                    sim: run.sim,
                    k,
                    filter: f.name().to_string(),
                    error_norm: s.error_norm,
                    nees: s.nees,
                    n_dof: s.n_dof,
                    iterations: s.iterations,
                    converged: s.converged,
                    diverged: s.diverged,
                })?;
            }
        }
    }
    w.flush().map_err(io_err(&out_dir.join(&runs_name)))?;
    outputs.insert("runs".into(), runs_name);

    let summary_name = format!("scenario{id}_summary.json");
    let path = out_dir.join(&summary_name);
    fs::write(&path, serde_json::to_string_pretty(&result.summary)?).map_err(io_err(&path))?;
    outputs.insert("summary".into(), summary_name);
    Ok(outputs)
}

/// Runs the scenario, writes its outputs and `scenario{id}_manifest.json`.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: &Path, workers: Option<usize>) -> Result<RunManifest, BenchError> {
    let mut timings = BTreeMap::new();
    let t0 = Instant::now();
    let result = run_monte_carlo(cfg, workers)?;
    timings.insert("simulate".to_string(), t0.elapsed().as_secs_f64());
    let t1 = Instant::now();
    let outputs = write_outputs(&result, out_dir)?;
    timings.insert("write".to_string(), t1.elapsed().as_secs_f64());
    for s in &result.summary.filters {
        info!(
            "scenario {} {:>8}: mean iterations {:.2}, final error {:.4}, diverged {}",
            cfg.scenario_id,
            s.filter.name(),
            s.mean_iterations,
            s.final_mean_error,
            s.n_diverged
        );
    }
    let manifest = RunManifest {
        scenario_id: cfg.scenario_id,
        seed: cfg.seed,
        n_sims: cfg.n_sims,
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.to_toml(),
        outputs,
        timings,
    };
    let path = out_dir.join(format!("scenario{}_manifest.json", cfg.scenario_id));
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&path))?;
    Ok(manifest)
}
