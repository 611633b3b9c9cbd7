//! C ABI for the `iiekf` crate.
//!
//! Every fallible function returns an [`IiekfStatus`]. On failure a
//! human-readable message is stored per thread and can be fetched with
//! [`iiekf_last_error_message`]. Matrices cross the boundary as row-major
//! `double` arrays whose length is passed explicitly. Panics never unwind
//! into the caller; they surface as [`IiekfStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use iiekf::belief::{BeliefError, GainMode, GroupBelief};
use iiekf::bench::{self, BenchError};
use iiekf::crane::ScenarioConfig;
use iiekf::filters::{self, FilterError, GnConfig, InvariantMeasurement};
use iiekf::lie::{GroupKind, LieError};
use iiekf::solver::{self, LoadedSystem, SolverError, SystemFile};
use nalgebra::{DMatrix, DVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IiekfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NotInGroup = 4,
    NotPsd = 5,
    SingularInnovation = 6,
    NonFinite = 7,
    AngleNearPi = 8,
    NotConverged = 9,
    Inconsistent = 10,
    Io = 11,
    Panic = 255,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IiekfGroup {
    So3 = 0,
    Se3 = 1,
    Se23 = 2,
}

impl IiekfGroup {
    fn kind(self) -> GroupKind {
        match self {
            IiekfGroup::So3 => GroupKind::So3,
            IiekfGroup::Se3 => GroupKind::Se3,
            IiekfGroup::Se23 => GroupKind::Se23,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IiekfGainMode {
    Standard = 0,
    NoiseFree = 1,
    Regularized = 2,
}

/// Gauss-Newton settings. `delta` is only read in regularized mode.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IiekfUpdateOptions {
    pub tol: f64,
    pub n_max: usize,
    pub gain_mode: IiekfGainMode,
    pub delta: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IiekfUpdateInfo {
    pub iterations: usize,
    pub converged: bool,
    pub step_norm: f64,
}

/// Summary of a solved equation system.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IiekfSolveInfo {
    pub n_equations: usize,
    pub max_residual: f64,
    pub final_rank: usize,
}

/// Opaque Gaussian belief on a matrix Lie group.
pub struct IiekfBelief {
    inner: GroupBelief,
}

struct Failure(IiekfStatus, String);

type FfiResult<T> = Result<T, Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail<T>(status: IiekfStatus, msg: impl Into<String>) -> FfiResult<T> {
    Err(Failure(status, msg.into()))
}

impl From<LieError> for Failure {
    fn from(e: LieError) -> Self {
        let status = match e {
            LieError::DimensionMismatch { .. } => IiekfStatus::DimensionMismatch,
            LieError::NotInAlgebra { .. } | LieError::NotInGroup(_) => IiekfStatus::NotInGroup,
            LieError::AngleNearPi { .. } => IiekfStatus::AngleNearPi,
            LieError::NonFinite => IiekfStatus::NonFinite,
        };
        Failure(status, e.to_string())
    }
}

impl From<BeliefError> for Failure {
    fn from(e: BeliefError) -> Self {
        let status = match e {
            BeliefError::NotPsd { .. } => IiekfStatus::NotPsd,
            BeliefError::SingularInnovation { .. } => IiekfStatus::SingularInnovation,
            BeliefError::Shape(_) => IiekfStatus::DimensionMismatch,
        };
        Failure(status, e.to_string())
    }
}

impl From<FilterError> for Failure {
    fn from(e: FilterError) -> Self {
        match e {
            FilterError::Belief(b) => b.into(),
            FilterError::Lie(l) => l.into(),
            FilterError::NonFinite { .. } => Failure(IiekfStatus::NonFinite, e.to_string()),
            FilterError::Shape(_) => Failure(IiekfStatus::DimensionMismatch, e.to_string()),
        }
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Filter(f) => f.into(),
            SolverError::Lie(l) => l.into(),
            SolverError::NotConverged(_) => Failure(IiekfStatus::NotConverged, e.to_string()),
            SolverError::InconsistentSystem { .. } => Failure(IiekfStatus::Inconsistent, e.to_string()),
            SolverError::Invalid(_) => Failure(IiekfStatus::InvalidArgument, e.to_string()),
        }
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        let status = if e.is_config() {
            IiekfStatus::InvalidArgument
        } else {
            IiekfStatus::Io
        };
        Failure(status, e.to_string())
    }
}

/// Runs `f`, records any failure and converts panics into a status.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> IiekfStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IiekfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            IiekfStatus::Panic
        }
    }
}

/// # Safety
/// `data` must be null or point to `len` readable doubles.
unsafe fn slice<'a>(data: *const f64, len: usize, what: &str) -> FfiResult<&'a [f64]> {
    if data.is_null() {
        return fail(IiekfStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

/// # Safety
/// `data` must be null or point to `len` readable doubles.
unsafe fn square(data: *const f64, len: usize, n: usize, what: &str) -> FfiResult<DMatrix<f64>> {
    if len != n * n {
        return fail(
            IiekfStatus::DimensionMismatch,
            format!("{what} needs {} entries, got {len}", n * n),
        );
    }
    Ok(DMatrix::from_row_slice(n, n, slice(data, len, what)?))
}

/// # Safety
/// `out` must be null or point to `len` writable doubles.
unsafe fn write_row_major(m: &DMatrix<f64>, out: *mut f64, len: usize, what: &str) -> FfiResult<()> {
    if out.is_null() {
        return fail(IiekfStatus::NullPointer, format!("{what} buffer is null"));
    }
    if len != m.len() {
        return fail(
            IiekfStatus::DimensionMismatch,
            format!("{what} buffer needs {} entries, got {len}", m.len()),
        );
    }
    let dst = std::slice::from_raw_parts_mut(out, len);
    for (i, row) in m.row_iter().enumerate() {
        for (j, x) in row.iter().enumerate() {
            dst[i * m.ncols() + j] = *x;
        }
    }
    Ok(())
}

unsafe fn belief_ref<'a>(b: *const IiekfBelief) -> FfiResult<&'a IiekfBelief> {
    b.as_ref()
        .ok_or_else(|| Failure(IiekfStatus::NullPointer, "belief handle is null".into()))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> FfiResult<&Path> {
    if p.is_null() {
        return fail(IiekfStatus::NullPointer, format!("{what} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| Failure(IiekfStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

fn gn_config(opts: Option<&IiekfUpdateOptions>) -> FfiResult<GnConfig> {
    let Some(o) = opts else {
        return Ok(GnConfig::default());
    };
    if !(o.tol > 0.0 && o.tol.is_finite()) || o.n_max == 0 {
        return fail(IiekfStatus::InvalidArgument, "tol must be positive and n_max at least 1");
    }
    let gain_mode = match o.gain_mode {
        IiekfGainMode::Standard => GainMode::Standard,
        IiekfGainMode::NoiseFree => GainMode::NoiseFree,
        IiekfGainMode::Regularized if o.delta > 0.0 && o.delta.is_finite() => GainMode::Regularized(o.delta),
        IiekfGainMode::Regularized => return fail(IiekfStatus::InvalidArgument, "delta must be positive"),
    };
    Ok(GnConfig {
        tol: o.tol,
        n_max: o.n_max,
        gain_mode,
        record_iterates: false,
    })
}

// ---------------------------------------------------------------------------
// Errors and metadata

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn iiekf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Length in bytes of the last error message on this thread, including the
/// terminating NUL, or 0 when there is none.
#[no_mangle]
pub extern "C" fn iiekf_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |c| c.as_bytes_with_nul().len()))
}

/// Copies the last error message into `buf`, truncating to `len - 1` bytes.
/// Returns the number of bytes written excluding the NUL, or -1 if `buf` is
/// null or `len` is 0.
///
/// # Safety
/// `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn iiekf_last_error_message(buf: *mut c_char, len: usize) -> isize {
    if buf.is_null() || len == 0 {
        return -1;
    }
    LAST_ERROR.with(|e| {
        let borrowed = e.borrow();
        let bytes = borrowed.as_ref().map_or(&[][..], |c| c.as_bytes());
        let n = bytes.len().min(len - 1);
        ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
        *buf.add(n) = 0;
        n as isize
    })
}

/// Matrix size N of the group's N×N representation.
#[no_mangle]
pub extern "C" fn iiekf_group_matrix_size(group: IiekfGroup) -> usize {
    group.kind().matrix_size()
}

/// Tangent-space dimension of the group.
#[no_mangle]
pub extern "C" fn iiekf_group_dim(group: IiekfGroup) -> usize {
    group.kind().dim()
}

// ---------------------------------------------------------------------------
// Lie group maps

/// Exponential map: `xi` has `iiekf_group_dim` entries, `out` receives the
/// row-major group matrix.
///
/// # Safety
/// Pointers must reference buffers of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn iiekf_exp(
    group: IiekfGroup,
    xi: *const f64,
    xi_len: usize,
    out: *mut f64,
    out_len: usize,
) -> IiekfStatus {
    guard(|| {
        let kind = group.kind();
        let xi = DVector::from_row_slice(slice(xi, xi_len, "xi")?);
        let g = kind.exp(&xi)?;
        write_row_major(g.matrix(), out, out_len, "exp")
    })
}

/// Logarithm of a row-major group matrix into `out` (`iiekf_group_dim`
/// entries).
///
/// # Safety
/// Pointers must reference buffers of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn iiekf_log(
    group: IiekfGroup,
    matrix: *const f64,
    matrix_len: usize,
    out: *mut f64,
    out_len: usize,
) -> IiekfStatus {
    guard(|| {
        let kind = group.kind();
        let g = kind.element(square(matrix, matrix_len, kind.matrix_size(), "matrix")?)?;
        let xi = kind.log(&g)?;
        write_row_major(&DMatrix::from_column_slice(xi.len(), 1, xi.as_slice()), out, out_len, "log")
    })
}

// ---------------------------------------------------------------------------
// Beliefs

/// Creates a belief from a row-major mean matrix and covariance. On success
/// `*out` owns a handle that must be released with [`iiekf_belief_free`].
///
/// # Safety
/// Pointers must reference buffers of the stated lengths and `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn iiekf_belief_new(
    group: IiekfGroup,
    mean: *const f64,
    mean_len: usize,
    cov: *const f64,
    cov_len: usize,
    out: *mut *mut IiekfBelief,
) -> IiekfStatus {
    guard(|| {
        if out.is_null() {
            return fail(IiekfStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let kind = group.kind();
        let mean = kind.element(square(mean, mean_len, kind.matrix_size(), "mean")?)?;
        let cov = square(cov, cov_len, kind.dim(), "cov")?;
        iiekf::belief::factor(&cov)?;
        *out = Box::into_raw(Box::new(IiekfBelief {
            inner: GroupBelief::new(mean, cov),
        }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `belief` must come from [`iiekf_belief_new`] or [`iiekf_belief_clone`]
/// and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn iiekf_belief_free(belief: *mut IiekfBelief) {
    if !belief.is_null() {
        drop(Box::from_raw(belief));
    }
}

/// Deep copy of a belief; null on failure.
///
/// # Safety
/// `belief` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn iiekf_belief_clone(belief: *const IiekfBelief) -> *mut IiekfBelief {
    let mut copy = ptr::null_mut();
    guard(|| {
        let b = belief_ref(belief)?;
        copy = Box::into_raw(Box::new(IiekfBelief { inner: b.inner.clone() }));
        Ok(())
    });
    copy
}

/// Tangent dimension of the belief's group, or 0 for a null handle.
///
/// # Safety
/// `belief` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn iiekf_belief_dim(belief: *const IiekfBelief) -> usize {
    belief.as_ref().map_or(0, |b| b.inner.mean.kind().dim())
}

/// # Safety
/// `belief` must be a live handle and `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn iiekf_belief_mean(belief: *const IiekfBelief, out: *mut f64, out_len: usize) -> IiekfStatus {
    guard(|| write_row_major(belief_ref(belief)?.inner.mean.matrix(), out, out_len, "mean"))
}

/// # Safety
/// `belief` must be a live handle and `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn iiekf_belief_cov(belief: *const IiekfBelief, out: *mut f64, out_len: usize) -> IiekfStatus {
    guard(|| write_row_major(&belief_ref(belief)?.inner.cov, out, out_len, "cov"))
}

/// Iterated invariant update with the measurement `y = χ d + noise`.
///
/// `d` and `y` have `iiekf_group_matrix_size` entries. `noise` is the
/// row-major covariance on the informative rows of `y`; pass null to treat
/// the measurement as exact. `options` may be null for the defaults. On
/// failure the belief is left unchanged.
///
/// # Safety
/// Pointers must be null where allowed or reference buffers of the stated
/// lengths; `belief` must be a live handle.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn iiekf_belief_update(
    belief: *mut IiekfBelief,
    d: *const f64,
    d_len: usize,
    y: *const f64,
    y_len: usize,
    noise: *const f64,
    noise_len: usize,
    options: *const IiekfUpdateOptions,
    info: *mut IiekfUpdateInfo,
) -> IiekfStatus {
    guard(|| {
        let b = belief
            .as_mut()
            .ok_or_else(|| Failure(IiekfStatus::NullPointer, "belief handle is null".into()))?;
        let kind = b.inner.mean.kind().clone();
        let d = DVector::from_row_slice(slice(d, d_len, "d")?);
        let y = DVector::from_row_slice(slice(y, y_len, "y")?);
        let mut cfg = gn_config(options.as_ref())?;
        let meas = if noise.is_null() {
            if cfg.gain_mode == GainMode::Standard {
                cfg.gain_mode = GainMode::NoiseFree;
            }
            InvariantMeasurement::exact(&kind, d, y)
        } else {
            let m = kind.informative_rows().len();
            InvariantMeasurement::new(d, y, square(noise, noise_len, m, "noise")?)
        };
        let (post, report) = filters::iiekf_update(&b.inner, &meas, &cfg)?;
        b.inner = post;
        if let Some(info) = info.as_mut() {
            *info = IiekfUpdateInfo {
                iterations: report.iterations,
                converged: report.converged,
                step_norm: report.step_norm,
            };
        }
        Ok(())
    })
}

/// Writes `‖χ̂ d − y‖` and `‖H P Hᵀ‖_F`; both vanish when the belief is
/// compatible with the exact measurement `y = χ d`.
///
/// # Safety
/// Pointers must reference buffers of the stated lengths and the outputs
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn iiekf_belief_compatibility(
    belief: *const IiekfBelief,
    d: *const f64,
    d_len: usize,
    y: *const f64,
    y_len: usize,
    residual: *mut f64,
    projected_cov: *mut f64,
) -> IiekfStatus {
    guard(|| {
        let b = belief_ref(belief)?;
        if residual.is_null() || projected_cov.is_null() {
            return fail(IiekfStatus::NullPointer, "output pointer is null");
        }
        let d = DVector::from_row_slice(slice(d, d_len, "d")?);
        let y = DVector::from_row_slice(slice(y, y_len, "y")?);
        let (r, p) = filters::check_compatibility(&b.inner, &d, &y)?;
        *residual = r;
        *projected_cov = p;
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Solver and benchmark

/// Solves the group equation system described by a TOML file. The row-major
/// solution matrix is written to `solution`; `info` may be null.
///
/// # Safety
/// `path` must be a NUL-terminated string and `solution` must hold
/// `solution_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn iiekf_solve_file(
    path: *const c_char,
    solution: *mut f64,
    solution_len: usize,
    info: *mut IiekfSolveInfo,
) -> IiekfStatus {
    guard(|| {
        let file = SystemFile::load(path_arg(path, "path")?)?;
        let LoadedSystem::Group { system, initial, p0 } = file.build()? else {
            return fail(IiekfStatus::InvalidArgument, "linear systems are not supported here");
        };
        let res = solver::solve(&system, &initial, &p0, &GnConfig::default())?;
        write_row_major(res.solution.matrix(), solution, solution_len, "solution")?;
        if let Some(info) = info.as_mut() {
            *info = IiekfSolveInfo {
                n_equations: res.residuals.len(),
                max_residual: res.residuals.iter().cloned().fold(0.0, f64::max),
                final_rank: res.final_rank,
            };
        }
        Ok(())
    })
}

/// Runs crane scenario `id` (1, 2 or 3) and writes its result files into
/// `out_dir`. `n_sims = 0` keeps the scenario default; `workers = 0` uses
/// every core.
///
/// # Safety
/// `out_dir` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn iiekf_run_scenario(
    id: u8,
    n_sims: usize,
    seed: u64,
    workers: usize,
    out_dir: *const c_char,
) -> IiekfStatus {
    guard(|| {
        let out = path_arg(out_dir, "out_dir")?;
        let mut cfg = ScenarioConfig::scenario(id).map_err(BenchError::from)?;
        if n_sims > 0 {
            cfg.n_sims = n_sims;
        }
        cfg.seed = seed;
        bench::run_scenario(&cfg, out, (workers > 0).then_some(workers))?;
        Ok(())
    })
}
