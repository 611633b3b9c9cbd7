use std::ffi::{c_char, CStr, CString};
use std::ptr;

use iiekf_ffi::*;

fn last_error() -> String {
    let len = iiekf_last_error_length();
    let mut buf = vec![0 as c_char; len.max(1)];
    unsafe { iiekf_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn identity(n: usize) -> Vec<f64> {
    (0..n * n).map(|i| if i % (n + 1) == 0 { 1.0 } else { 0.0 }).collect()
}

fn so3_belief(mean: &[f64]) -> *mut IiekfBelief {
    let mut b = ptr::null_mut();
    let cov = identity(3);
    let s = unsafe { iiekf_belief_new(IiekfGroup::So3, mean.as_ptr(), mean.len(), cov.as_ptr(), cov.len(), &mut b) };
    assert_eq!(s, IiekfStatus::Ok, "{}", last_error());
    b
}

#[test]
fn exp_log_round_trip() {
    let xi = [0.3, -0.2, 0.5, 1.0, 2.0, -1.0, 0.5, 0.1, 0.2];
    let mut g = [0.0; 25];
    let mut back = [0.0; 9];
    unsafe {
        assert_eq!(iiekf_exp(IiekfGroup::Se23, xi.as_ptr(), 9, g.as_mut_ptr(), 25), IiekfStatus::Ok);
        assert_eq!(iiekf_log(IiekfGroup::Se23, g.as_ptr(), 25, back.as_mut_ptr(), 9), IiekfStatus::Ok);
    }
    assert_eq!(g[24], 1.0);
    for i in 0..9 {
        assert!((back[i] - xi[i]).abs() < 1e-12);
    }
    assert_eq!(iiekf_group_dim(IiekfGroup::Se23), 9);
    assert_eq!(iiekf_group_matrix_size(IiekfGroup::Se3), 4);
}

#[test]
fn statuses_and_messages() {
    let mut out = [0.0; 9];
    let s = unsafe { iiekf_exp(IiekfGroup::So3, [0.0; 2].as_ptr(), 2, out.as_mut_ptr(), 9) };
    assert_eq!(s, IiekfStatus::DimensionMismatch);
    assert!(last_error().contains("dimension"), "{}", last_error());

    let s = unsafe { iiekf_exp(IiekfGroup::So3, ptr::null(), 3, out.as_mut_ptr(), 9) };
    assert_eq!(s, IiekfStatus::NullPointer);

    let s = unsafe { iiekf_exp(IiekfGroup::So3, [0.1, 0.0, 0.0].as_ptr(), 3, out.as_mut_ptr(), 4) };
    assert_eq!(s, IiekfStatus::DimensionMismatch);

    let not_rotation = [2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let s = unsafe { iiekf_log(IiekfGroup::So3, not_rotation.as_ptr(), 9, out.as_mut_ptr(), 3) };
    assert_eq!(s, IiekfStatus::NotInGroup);

    let ok = unsafe { iiekf_exp(IiekfGroup::So3, [0.1, 0.0, 0.0].as_ptr(), 3, out.as_mut_ptr(), 9) };
    assert_eq!(ok, IiekfStatus::Ok);
    assert_eq!(iiekf_last_error_length(), 0);
}

#[test]
fn error_message_truncates() {
    let mut out = [0.0; 9];
    unsafe { iiekf_exp(IiekfGroup::So3, [0.0; 2].as_ptr(), 2, out.as_mut_ptr(), 9) };
    let mut buf = [0 as c_char; 6];
    let n = unsafe { iiekf_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert_eq!(n, 5);
    assert_eq!(buf[5], 0);
    assert_eq!(unsafe { iiekf_last_error_message(ptr::null_mut(), 4) }, -1);
}

#[test]
fn noise_free_update_lands_on_the_measurement() {
    let b = so3_belief(&identity(3));
    let mut r = [0.0; 9];
    unsafe { iiekf_exp(IiekfGroup::So3, [0.2, -0.1, 0.3].as_ptr(), 3, r.as_mut_ptr(), 9) };
    let d = [1.0, 0.0, 0.0];
    let y = [r[0], r[3], r[6]];
    let mut info = IiekfUpdateInfo::default();
    let s = unsafe { iiekf_belief_update(b, d.as_ptr(), 3, y.as_ptr(), 3, ptr::null(), 0, ptr::null(), &mut info) };
    assert_eq!(s, IiekfStatus::Ok, "{}", last_error());
    assert!(info.converged && info.iterations >= 2);

    let (mut res, mut proj) = (f64::NAN, f64::NAN);
    let s = unsafe { iiekf_belief_compatibility(b, d.as_ptr(), 3, y.as_ptr(), 3, &mut res, &mut proj) };
    assert_eq!(s, IiekfStatus::Ok);
    assert!(res < 1e-8 && proj < 1e-9, "{res} {proj}");
    unsafe { iiekf_belief_free(b) };
}

#[test]
fn noisy_update_with_options_and_clone() {
    let b = so3_belief(&identity(3));
    let copy = unsafe { iiekf_belief_clone(b) };
    assert!(!copy.is_null());
    let noise = [0.01, 0.0, 0.0, 0.0, 0.01, 0.0, 0.0, 0.0, 0.01];
    let opts = IiekfUpdateOptions {
        tol: 1e-10,
        n_max: 20,
        gain_mode: IiekfGainMode::Standard,
        delta: 0.0,
    };
    let (d, y) = ([0.0, 0.0, 1.0], [0.0, 0.6, 0.8]);
    let s = unsafe { iiekf_belief_update(b, d.as_ptr(), 3, y.as_ptr(), 3, noise.as_ptr(), 9, &opts, ptr::null_mut()) };
    assert_eq!(s, IiekfStatus::Ok, "{}", last_error());

    let (mut mean, mut cov, mut cov0) = ([0.0; 9], [0.0; 9], [0.0; 9]);
    unsafe {
        assert_eq!(iiekf_belief_mean(b, mean.as_mut_ptr(), 9), IiekfStatus::Ok);
        assert_eq!(iiekf_belief_cov(b, cov.as_mut_ptr(), 9), IiekfStatus::Ok);
        assert_eq!(iiekf_belief_cov(copy, cov0.as_mut_ptr(), 9), IiekfStatus::Ok);
        assert_eq!(iiekf_belief_dim(copy), 3);
        assert_eq!(iiekf_belief_dim(ptr::null()), 0);
    }
    let z = [mean[2], mean[5], mean[8]];
    assert!(z[1] > 0.5 && z[2] > 0.7, "{z:?}");
    assert!(cov[0] < cov0[0] && cov[4] < cov0[4]);
    assert!((cov[8] - cov0[8]).abs() < 1e-12);
    unsafe {
        iiekf_belief_free(b);
        iiekf_belief_free(copy);
        iiekf_belief_free(ptr::null_mut());
    }
}

#[test]
fn failed_update_leaves_the_belief_unchanged() {
    let b = so3_belief(&identity(3));
    let bad_opts = IiekfUpdateOptions {
        tol: 1e-7,
        n_max: 10,
        gain_mode: IiekfGainMode::Regularized,
        delta: -1.0,
    };
    let (d, y) = ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
    let s = unsafe { iiekf_belief_update(b, d.as_ptr(), 3, y.as_ptr(), 3, ptr::null(), 0, &bad_opts, ptr::null_mut()) };
    assert_eq!(s, IiekfStatus::InvalidArgument);
    let s = unsafe { iiekf_belief_update(b, d.as_ptr(), 3, y.as_ptr(), 3, [1.0].as_ptr(), 1, ptr::null(), ptr::null_mut()) };
    assert_eq!(s, IiekfStatus::DimensionMismatch);
    let mut mean = [0.0; 9];
    unsafe { iiekf_belief_mean(b, mean.as_mut_ptr(), 9) };
    assert_eq!(mean.to_vec(), identity(3));
    unsafe { iiekf_belief_free(b) };
}

#[test]
fn belief_construction_is_validated() {
    let mut b = ptr::null_mut();
    let cov = identity(3);
    let not_psd = [-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let id = identity(3);
    unsafe {
        assert_eq!(
            iiekf_belief_new(IiekfGroup::So3, id.as_ptr(), 9, not_psd.as_ptr(), 9, &mut b),
            IiekfStatus::NotPsd
        );
        assert!(b.is_null());
        assert_eq!(
            iiekf_belief_new(IiekfGroup::So3, not_psd.as_ptr(), 9, cov.as_ptr(), 9, &mut b),
            IiekfStatus::NotInGroup
        );
        assert_eq!(
            iiekf_belief_new(IiekfGroup::So3, id.as_ptr(), 9, cov.as_ptr(), 9, ptr::null_mut()),
            IiekfStatus::NullPointer
        );
        assert_eq!(
            iiekf_belief_update(ptr::null_mut(), id.as_ptr(), 3, id.as_ptr(), 3, ptr::null(), 0, ptr::null(), ptr::null_mut()),
            IiekfStatus::NullPointer
        );
    }
}

#[test]
fn solve_file_and_statuses() {
    let demos = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/demos/");
    let path = CString::new(format!("{demos}so3_two_vectors.toml")).unwrap();
    let mut sol = [0.0; 9];
    let mut info = IiekfSolveInfo::default();
    let s = unsafe { iiekf_solve_file(path.as_ptr(), sol.as_mut_ptr(), 9, &mut info) };
    assert_eq!(s, IiekfStatus::Ok, "{}", last_error());
    assert_eq!(info.n_equations, 2);
    assert_eq!(info.final_rank, 0);
    assert!(info.max_residual < 1e-8);

    let path = CString::new(format!("{demos}so3_inconsistent.toml")).unwrap();
    let s = unsafe { iiekf_solve_file(path.as_ptr(), sol.as_mut_ptr(), 9, ptr::null_mut()) };
    assert_eq!(s, IiekfStatus::Inconsistent);

    let path = CString::new(format!("{demos}linear_3x3.toml")).unwrap();
    let s = unsafe { iiekf_solve_file(path.as_ptr(), sol.as_mut_ptr(), 9, ptr::null_mut()) };
    assert_eq!(s, IiekfStatus::InvalidArgument);

    let path = CString::new("/nonexistent/system.toml").unwrap();
    let s = unsafe { iiekf_solve_file(path.as_ptr(), sol.as_mut_ptr(), 9, ptr::null_mut()) };
    assert_eq!(s, IiekfStatus::InvalidArgument);
}

#[test]
fn run_scenario_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let s = unsafe { iiekf_run_scenario(2, 2, 5, 1, out.as_ptr()) };
    assert_eq!(s, IiekfStatus::Ok, "{}", last_error());
    assert!(dir.path().join("scenario2_iiekf.csv").exists());
    assert_eq!(unsafe { iiekf_run_scenario(4, 2, 5, 1, out.as_ptr()) }, IiekfStatus::InvalidArgument);
    assert_eq!(unsafe { iiekf_run_scenario(1, 2, 5, 1, ptr::null()) }, IiekfStatus::NullPointer);
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(iiekf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
