//! C ABI over `ntz-core`.
//!
//! Every function returns an [`NtzStatus`] and writes results through
//! out-pointers. On failure the message is kept per thread and can be read
//! with [`ntz_last_error_message`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use ntz_core::closed_forms;
use ntz_core::gaussian::RngStream;
use ntz_core::process::{estimate_h_mc, estimate_k_mc, ModelParams};
use ntz_core::solver::{solve_h, HGrid, SolverConfig};
use ntz_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NtzStatus {
    Ok = 0,
    NullPointer = 1,
    Domain = 2,
    Parameter = 3,
    UnsupportedRegion = 4,
    NonTermination = 5,
    Singularity = 6,
    Convergence = 7,
    Truncation = 8,
    Infeasible = 9,
    BufferTooSmall = 10,
    NoSolution = 11,
    Panic = 12,
}

impl From<&Error> for NtzStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Domain(_) => NtzStatus::Domain,
            Error::Parameter(_) => NtzStatus::Parameter,
            Error::UnsupportedRegion(_) => NtzStatus::UnsupportedRegion,
            Error::NonTermination { .. } => NtzStatus::NonTermination,
            Error::Singularity(_) => NtzStatus::Singularity,
            Error::Convergence(_) => NtzStatus::Convergence,
            Error::Truncation(_) => NtzStatus::Truncation,
            Error::Infeasible(_) => NtzStatus::Infeasible,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: NtzStatus, msg: impl Into<String>) -> NtzStatus {
    set_error(msg.into());
    status
}

/// Run `body` with panics and core errors mapped to status codes.
fn guard<F>(body: F) -> NtzStatus
where
    F: FnOnce() -> Result<(), (NtzStatus, String)>,
{
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => NtzStatus::Ok,
        Ok(Err((status, msg))) => fail(status, msg),
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(NtzStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

fn core<T>(r: ntz_core::Result<T>) -> Result<T, (NtzStatus, String)> {
    r.map_err(|e| (NtzStatus::from(&e), e.to_string()))
}

fn null(name: &str) -> (NtzStatus, String) {
    (NtzStatus::NullPointer, format!("{name} is null"))
}

/// # Safety
/// `ptr` must be null or valid for a write of `T`.
unsafe fn write<T>(ptr: *mut T, name: &str, value: T) -> Result<(), (NtzStatus, String)> {
    if ptr.is_null() {
        return Err(null(name));
    }
    unsafe { ptr.write(value) };
    Ok(())
}

/// Null-terminated version string with static lifetime.
#[no_mangle]
pub extern "C" fn ntz_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Length in bytes of the last error message on this thread, excluding the terminator; 0 if none.
#[no_mangle]
pub extern "C" fn ntz_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |c| c.as_bytes().len()))
}

/// Copy the last error message (null-terminated) into `buf` of capacity `len`.
///
/// # Safety
/// `buf` must be valid for `len` bytes of writes.
#[no_mangle]
pub unsafe extern "C" fn ntz_last_error_message(buf: *mut c_char, len: usize) -> NtzStatus {
    if buf.is_null() {
        return NtzStatus::NullPointer;
    }
    LAST_ERROR.with(|e| {
        let borrowed = e.borrow();
        let bytes = borrowed.as_ref().map_or(&b"\0"[..], |c| c.as_bytes_with_nul());
        if bytes.len() > len {
            return NtzStatus::BufferTooSmall;
        }
        unsafe { std::ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, bytes.len()) };
        NtzStatus::Ok
    })
}

/// `K(0, η) = 2ρ f(η)`.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ntz_k_axis(eta: f64, rho: f64, out: *mut f64) -> NtzStatus {
    guard(|| unsafe { write(out, "out", core(closed_forms::k_axis(eta, rho))?) })
}

/// `K₀(α, η)`, the correlation without the hysteresis correction.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ntz_k0(alpha: f64, eta: f64, rho: f64, out: *mut f64) -> NtzStatus {
    guard(|| unsafe { write(out, "out", core(closed_forms::k0(alpha, eta, rho))?) })
}

/// First hysteresis correction `E₀(α, η)`.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ntz_e0(alpha: f64, eta: f64, rho: f64, out: *mut f64) -> NtzStatus {
    guard(|| unsafe { write(out, "out", core(closed_forms::e0(alpha, eta, rho))?) })
}

/// `H(0, η) = 1/F(−η)`.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ntz_survival_at0(eta: f64, out: *mut f64) -> NtzStatus {
    guard(|| unsafe { write(out, "out", core(closed_forms::survival_at0(eta))?) })
}

/// Gradient of `K` at `(0, η)`.
///
/// # Safety
/// `d_alpha` and `d_eta` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ntz_grad_k_at0(eta: f64, rho: f64, d_alpha: *mut f64, d_eta: *mut f64) -> NtzStatus {
    guard(|| {
        let g = core(closed_forms::grad_k_at0(eta, rho))?;
        unsafe {
            write(d_alpha, "d_alpha", g.d_alpha)?;
            write(d_eta, "d_eta", g.d_eta)
        }
    })
}

/// Gradient of `H` at `(0, η)`.
///
/// # Safety
/// `d_alpha` and `d_eta` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ntz_grad_survival_at0(eta: f64, d_alpha: *mut f64, d_eta: *mut f64) -> NtzStatus {
    guard(|| {
        let g = core(closed_forms::grad_survival_at0(eta))?;
        unsafe {
            write(d_alpha, "d_alpha", g.d_alpha)?;
            write(d_eta, "d_eta", g.d_eta)
        }
    })
}

/// Multiplier `λ` with `∇H = λ∇K` at `(0, η)`; `Singularity` at `η = 0`.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ntz_lagrange_lambda(eta: f64, rho: f64, out: *mut f64) -> NtzStatus {
    guard(|| unsafe { write(out, "out", core(closed_forms::lagrange_lambda(eta, rho))?) })
}

/// Second derivative of `H` along the level curve of `K` through `(0, η)`.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ntz_constrained_second_derivative(eta: f64, rho: f64, out: *mut f64) -> NtzStatus {
    guard(|| unsafe { write(out, "out", core(closed_forms::constrained_second_derivative(eta, rho))?) })
}

/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ntz_improvement_ratio(alpha: f64, eta: f64, out: *mut f64) -> NtzStatus {
    guard(|| unsafe { write(out, "out", core(closed_forms::improvement_ratio(alpha, eta))?) })
}

/// Batch-means Monte Carlo estimate of `K` from one path of `steps` periods.
///
/// # Safety
/// `mean` and `stderr` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ntz_estimate_k_mc(
    rho: f64,
    alpha: f64,
    eta: f64,
    steps: usize,
    seed: u64,
    mean: *mut f64,
    stderr: *mut f64,
) -> NtzStatus {
    guard(|| {
        let p = core(ModelParams::new(rho, alpha, eta))?;
        let e = core(estimate_k_mc(&p, steps, &RngStream::new(seed, 0)))?;
        unsafe {
            write(mean, "mean", e.mean)?;
            write(stderr, "stderr", e.stderr)
        }
    })
}

/// Monte Carlo estimate of `H` from `n` independent survival times.
///
/// # Safety
/// `mean` and `stderr` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ntz_estimate_h_mc(
    rho: f64,
    alpha: f64,
    eta: f64,
    n: u64,
    seed: u64,
    mean: *mut f64,
    stderr: *mut f64,
) -> NtzStatus {
    guard(|| {
        let p = core(ModelParams::new(rho, alpha, eta))?;
        let e = core(estimate_h_mc(&p, n, &RngStream::new(seed, 0)))?;
        unsafe {
            write(mean, "mean", e.mean)?;
            write(stderr, "stderr", e.stderr)
        }
    })
}

/// Plain-data subset of the solver settings; the damping schedule keeps its default.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct NtzSolverConfig {
    pub x_max: f64,
    /// Odd, at least 201.
    pub n_grid: usize,
    pub fp_tol: f64,
    pub max_iter: usize,
    /// Nonzero to widen `x_max` automatically when the kernel tail would be cut.
    pub extend_domain: i32,
}

#[no_mangle]
pub extern "C" fn ntz_solver_config_default() -> NtzSolverConfig {
    let d = SolverConfig::default();
    NtzSolverConfig {
        x_max: d.x_max,
        n_grid: d.n_grid,
        fp_tol: d.fp_tol,
        max_iter: d.max_iter,
        extend_domain: i32::from(d.extend_domain),
    }
}

/// Opaque solver handle holding its configuration and the last solution.
pub struct NtzSolver {
    config: SolverConfig,
    last: Option<HGrid>,
}

/// Create a solver; `config` may be null for defaults. Release with [`ntz_solver_free`].
///
/// # Safety
/// `config` must be null or point to a valid `NtzSolverConfig`; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ntz_solver_new(config: *const NtzSolverConfig, out: *mut *mut NtzSolver) -> NtzStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let c = if config.is_null() { ntz_solver_config_default() } else { unsafe { *config } };
        let config = SolverConfig {
            x_max: c.x_max,
            n_grid: c.n_grid,
            fp_tol: c.fp_tol,
            max_iter: c.max_iter,
            extend_domain: c.extend_domain != 0,
            ..SolverConfig::default()
        };
        core(config.validate())?;
        unsafe { out.write(Box::into_raw(Box::new(NtzSolver { config, last: None }))) };
        Ok(())
    })
}

/// Release a solver; null is ignored.
///
/// # Safety
/// `solver` must be null or a handle from [`ntz_solver_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ntz_solver_free(solver: *mut NtzSolver) {
    if !solver.is_null() {
        drop(unsafe { Box::from_raw(solver) });
    }
}

/// # Safety
/// `solver` must be null or a live handle.
unsafe fn handle<'a>(solver: *mut NtzSolver) -> Result<&'a mut NtzSolver, (NtzStatus, String)> {
    unsafe { solver.as_mut() }.ok_or_else(|| null("solver"))
}

fn solution(s: &NtzSolver) -> Result<&HGrid, (NtzStatus, String)> {
    s.last.as_ref().ok_or_else(|| (NtzStatus::NoSolution, "no successful solve on this handle yet".into()))
}

/// Solve for `h` at `(α, η)` and write `H(α, η)`; the grid is kept on the handle.
///
/// # Safety
/// `solver` must be a live handle; `h_out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ntz_solver_solve(solver: *mut NtzSolver, alpha: f64, eta: f64, h_out: *mut f64) -> NtzStatus {
    guard(|| {
        let s = unsafe { handle(solver)? };
        if h_out.is_null() {
            return Err(null("h_out"));
        }
        // ρ does not enter the survival problem.
        let p = core(ModelParams::new(0.5, alpha, eta))?;
        let grid = core(solve_h(&p, &s.config))?;
        let h = grid.survival_mean();
        s.last = Some(grid);
        unsafe { h_out.write(h) };
        Ok(())
    })
}

/// Number of grid nodes of the last solution.
///
/// # Safety
/// `solver` must be a live handle; `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ntz_solver_grid_len(solver: *mut NtzSolver, out: *mut usize) -> NtzStatus {
    guard(|| {
        let s = unsafe { handle(solver)? };
        let n = solution(s)?.nodes.len();
        unsafe { write(out, "out", n) }
    })
}

/// Copy nodes and values of the last solution into caller buffers of length `len`.
///
/// # Safety
/// `solver` must be a live handle; `nodes` and `values` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn ntz_solver_copy_grid(
    solver: *mut NtzSolver,
    nodes: *mut f64,
    values: *mut f64,
    len: usize,
) -> NtzStatus {
    guard(|| {
        let s = unsafe { handle(solver)? };
        let g = solution(s)?;
        if nodes.is_null() || values.is_null() {
            return Err(null("nodes or values"));
        }
        if len < g.nodes.len() {
            return Err((NtzStatus::BufferTooSmall, format!("need {} entries, got {len}", g.nodes.len())));
        }
        unsafe {
            std::ptr::copy_nonoverlapping(g.nodes.as_ptr(), nodes, g.nodes.len());
            std::ptr::copy_nonoverlapping(g.values.as_ptr(), values, g.values.len());
        }
        Ok(())
    })
}

/// Evaluate the last solution `h(x)` at any `x ≥ −η`.
///
/// # Safety
/// `solver` must be a live handle; `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ntz_solver_eval(solver: *mut NtzSolver, x: f64, out: *mut f64) -> NtzStatus {
    guard(|| {
        let s = unsafe { handle(solver)? };
        let g = solution(s)?;
        if !(x.is_finite() && x >= -g.eta) {
            return Err((NtzStatus::Domain, format!("x must be finite and >= -eta = {}, got {x}", -g.eta)));
        }
        unsafe { write(out, "out", g.eval(x)) }
    })
}
