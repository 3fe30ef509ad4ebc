use std::ffi::{c_char, CStr};
use std::ptr;

use ntz_core::closed_forms::{grad_k_at0, k_axis, survival_at0};
use ntz_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; ntz_last_error_length() + 1];
    assert_eq!(unsafe { ntz_last_error_message(buf.as_mut_ptr(), buf.len()) }, NtzStatus::Ok);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_owned()
}

#[test]
fn closed_forms_pass_through() {
    let mut v = 0.0;
    assert_eq!(unsafe { ntz_k_axis(1.0, 0.1, &mut v) }, NtzStatus::Ok);
    assert_eq!(v, k_axis(1.0, 0.1).unwrap());
    assert_eq!(unsafe { ntz_survival_at0(1.0, &mut v) }, NtzStatus::Ok);
    assert_eq!(v, survival_at0(1.0).unwrap());
    let (mut a, mut e) = (0.0, 0.0);
    assert_eq!(unsafe { ntz_grad_k_at0(1.0, 0.1, &mut a, &mut e) }, NtzStatus::Ok);
    let g = grad_k_at0(1.0, 0.1).unwrap();
    assert_eq!((a, e), (g.d_alpha, g.d_eta));
    assert_eq!(unsafe { ntz_constrained_second_derivative(1.0, 0.1, &mut v) }, NtzStatus::Ok);
    assert!(v < 0.0);
    assert_eq!(unsafe { ntz_improvement_ratio(0.0, 1.0, &mut v) }, NtzStatus::Ok);
    assert_eq!(v, 0.0);
}

#[test]
fn errors_map_to_codes_with_messages() {
    let mut v = 0.0;
    assert_eq!(unsafe { ntz_lagrange_lambda(0.0, 0.1, &mut v) }, NtzStatus::Singularity);
    assert!(last_error().contains("eta = 0"));
    assert_eq!(unsafe { ntz_k_axis(f64::NAN, 0.1, &mut v) }, NtzStatus::Domain);
    assert_eq!(unsafe { ntz_k0(1.5, 1.0, 0.1, &mut v) }, NtzStatus::Parameter);
    assert_eq!(unsafe { ntz_k_axis(1.0, 0.1, ptr::null_mut()) }, NtzStatus::NullPointer);
    // A successful call clears the message.
    assert_eq!(unsafe { ntz_k_axis(1.0, 0.1, &mut v) }, NtzStatus::Ok);
    assert_eq!(ntz_last_error_length(), 0);
    let mut tiny = [0 as c_char; 1];
    assert_eq!(unsafe { ntz_lagrange_lambda(0.0, 0.1, &mut v) }, NtzStatus::Singularity);
    assert_eq!(unsafe { ntz_last_error_message(tiny.as_mut_ptr(), 1) }, NtzStatus::BufferTooSmall);
}

#[test]
fn solver_handle_lifecycle() {
    let mut cfg = ntz_solver_config_default();
    cfg.n_grid = 801;
    let mut s: *mut NtzSolver = ptr::null_mut();
    assert_eq!(unsafe { ntz_solver_new(&cfg, &mut s) }, NtzStatus::Ok);
    let mut n = 0usize;
    assert_eq!(unsafe { ntz_solver_grid_len(s, &mut n) }, NtzStatus::NoSolution);

    let mut h = 0.0;
    assert_eq!(unsafe { ntz_solver_solve(s, 0.0, 1.0, &mut h) }, NtzStatus::Ok);
    assert!((h - survival_at0(1.0).unwrap()).abs() < 1e-8);
    assert_eq!(unsafe { ntz_solver_grid_len(s, &mut n) }, NtzStatus::Ok);
    assert_eq!(n, 801);
    let (mut nodes, mut values) = (vec![0.0; n], vec![0.0; n]);
    assert_eq!(
        unsafe { ntz_solver_copy_grid(s, nodes.as_mut_ptr(), values.as_mut_ptr(), n - 1) },
        NtzStatus::BufferTooSmall
    );
    assert_eq!(unsafe { ntz_solver_copy_grid(s, nodes.as_mut_ptr(), values.as_mut_ptr(), n) }, NtzStatus::Ok);
    assert_eq!(nodes[0], -1.0);
    assert!(values.iter().all(|v| (v - h).abs() < 1e-8));
    let mut hx = 0.0;
    assert_eq!(unsafe { ntz_solver_eval(s, 2.0, &mut hx) }, NtzStatus::Ok);
    assert!((hx - h).abs() < 1e-8);
    assert_eq!(unsafe { ntz_solver_eval(s, -3.0, &mut hx) }, NtzStatus::Domain);

    assert_eq!(unsafe { ntz_solver_solve(s, 0.5, 1.0, &mut h) }, NtzStatus::Ok);
    assert!((h - 10.7627).abs() < 1e-3);
    unsafe { ntz_solver_free(s) };
    unsafe { ntz_solver_free(ptr::null_mut()) };
}

#[test]
fn solver_rejects_bad_config() {
    let mut cfg = ntz_solver_config_default();
    cfg.n_grid = 200;
    let mut s: *mut NtzSolver = ptr::null_mut();
    assert_eq!(unsafe { ntz_solver_new(&cfg, &mut s) }, NtzStatus::Parameter);
    assert!(s.is_null());
    assert_eq!(unsafe { ntz_solver_new(ptr::null(), ptr::null_mut()) }, NtzStatus::NullPointer);
    let mut h = 0.0;
    assert_eq!(unsafe { ntz_solver_solve(ptr::null_mut(), 0.0, 1.0, &mut h) }, NtzStatus::NullPointer);
}

#[test]
fn monte_carlo_is_reproducible() {
    let (mut m1, mut s1, mut m2, mut s2) = (0.0, 0.0, 0.0, 0.0);
    assert_eq!(unsafe { ntz_estimate_h_mc(0.1, 0.0, 1.0, 20_000, 5, &mut m1, &mut s1) }, NtzStatus::Ok);
    assert_eq!(unsafe { ntz_estimate_h_mc(0.1, 0.0, 1.0, 20_000, 5, &mut m2, &mut s2) }, NtzStatus::Ok);
    assert_eq!((m1, s1), (m2, s2));
    assert!((m1 - survival_at0(1.0).unwrap()).abs() < 4.0 * s1);
    assert_eq!(unsafe { ntz_estimate_k_mc(0.1, 0.0, 1.0, 1_000_000, 5, &mut m1, &mut s1) }, NtzStatus::Ok);
    assert!((m1 - k_axis(1.0, 0.1).unwrap()).abs() < 4.0 * s1);
    assert_eq!(unsafe { ntz_estimate_k_mc(0.1, 0.0, 1.0, 1, 5, &mut m1, &mut s1) }, NtzStatus::Parameter);
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(ntz_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
