//! Constrained optimality of `α = 0`: maximize `H(α, η)` subject to `K(α, η) = c`.

use serde::{Deserialize, Serialize};

use crate::closed_forms::{
    constrained_second_derivative, e0, grad_k_at0, grad_survival_at0, improvement_ratio, k0, k_axis, lagrange_lambda,
    survival_at0, OptimalityReport,
};
use crate::error::{ensure_finite, Error, Result};
use crate::gaussian::RngStream;
use crate::process::{batch_means, burn_in, initial_position, McEstimate, ModelParams, PathStreams};
use crate::solver::{solve_h, SolverConfig};

/// Threshold `η₀` with `K(0, η₀) = 2ρ f(η₀) = c`, by bisection.
pub fn eta_for_level(c: f64, rho: f64) -> Result<f64> {
    ensure_finite("c", c)?;
    let top = k_axis(0.0, rho)?;
    if !(c > 0.0 && c < top) {
        return Err(Error::Infeasible(format!("level c = {c} must lie in (0, {top}) for rho = {rho}")));
    }
    let mut hi = 1.0;
    while k_axis(hi, rho)? >= c {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if k_axis(mid, rho)? > c {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointSource {
    ClosedForm,
    Solver,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelCurvePoint {
    pub alpha: f64,
    pub eta: f64,
    /// Correlation at the point; `stderr = 0` for exact values.
    pub k_value: McEstimate,
    pub h_value: f64,
    /// Solver error plus the η-uncertainty from `k_value` propagated into `H`.
    pub h_error: f64,
    pub source: PointSource,
    /// `|K − c| ≤ max(2·stderr, 1e−6)`.
    pub accepted: bool,
}

/// Monte Carlo effort and solver settings for curve tracing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceBudget {
    /// Path length shared by every α (common random numbers).
    pub steps: usize,
    pub master_seed: u64,
    pub solver: SolverConfig,
    /// Step for the η-derivative of `H` used in error propagation.
    pub fd_step: f64,
}

impl Default for TraceBudget {
    fn default() -> Self {
        Self { steps: 10_000_000, master_seed: 20_240_601, solver: SolverConfig::default(), fd_step: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCurveTrace {
    pub c: f64,
    pub rho: f64,
    pub eta0: f64,
    pub points: Vec<LevelCurvePoint>,
    /// First α at which tracing stopped, with the reason.
    pub stopped_at: Option<(f64, String)>,
}

/// Shared innovations and returns; the smoothed signal is rebuilt per α.
struct CommonPath {
    x: Vec<f64>,
    y: Vec<f64>,
    init: f64,
}

impl CommonPath {
    fn new(rho: f64, steps: usize, seed: &RngStream) -> Self {
        let mut st = PathStreams::new(seed);
        let noise = (1.0 - rho * rho).sqrt();
        let (x, y) = (0..steps)
            .map(|_| {
                let x = st.x.std_normal();
                (x, rho * x + noise * st.eps.std_normal())
            })
            .unzip();
        Self { x, y, init: st.init }
    }

    /// Same estimate as `estimate_k_mc` on the same seed, without storing `x̃`.
    fn k_hat(&self, alpha: f64, eta: f64) -> McEstimate {
        let s = (1.0 - alpha * alpha).sqrt();
        let b = burn_in(alpha);
        let mut xs = self.init;
        let mut w = 0i8;
        let products = self.x.iter().zip(&self.y).enumerate().filter_map(|(t, (&x, &y))| {
            xs = alpha * xs + s * x;
            let prev = if t == 0 { initial_position(xs) } else { w };
            w = if xs >= eta {
                1
            } else if xs <= -eta {
                -1
            } else {
                prev
            };
            (t >= b).then(|| f64::from(w) * y)
        });
        batch_means(products, self.x.len() - b)
    }
}

/// `K₀ + E₀` as a smooth stand-in for `K` when propagating errors.
fn dk_deta_approx(alpha: f64, eta: f64, rho: f64) -> Result<f64> {
    let h = 1e-5;
    let k = |e: f64| -> Result<f64> { Ok(k0(alpha, e, rho)? + e0(alpha, e, rho)?) };
    Ok((k(eta + h)? - k((eta - h).max(0.0))?) / (eta + h - (eta - h).max(0.0)))
}

fn h_with_error(alpha: f64, eta: f64, budget: &TraceBudget) -> Result<(f64, f64, f64)> {
    let p = |e: f64| ModelParams { rho: 0.5, alpha, eta: e };
    let grid = solve_h(&p(eta), &budget.solver)?;
    let h = grid.survival_mean();
    let h_max = grid.values.iter().fold(0.0f64, |m, v| m.max(*v));
    // ‖(I − A)⁻¹‖∞ equals max h, so the defect bounds the error after scaling by it.
    let solver_err = grid.residual * h_max;
    let d = budget.fd_step;
    let lo = (eta - d).max(0.0);
    let dh = (solve_h(&p(eta + d), &budget.solver)?.survival_mean() - solve_h(&p(lo), &budget.solver)?.survival_mean())
        / (eta + d - lo);
    Ok((h, solver_err, dh))
}

/// Trace `K(α, η) = c` by Monte Carlo bisection in η with common random numbers, attaching `H`.
pub fn trace_level_curve(c: f64, rho: f64, alpha_grid: &[f64], budget: &TraceBudget) -> Result<LevelCurveTrace> {
    let eta0 = eta_for_level(c, rho)?;
    if let Some(a) = alpha_grid.iter().find(|a| !(0.0..=0.5).contains(*a)) {
        return Err(Error::Parameter(format!("alpha grid must lie in [0, 0.5], got {a}")));
    }
    let max_burn = alpha_grid.iter().map(|&a| burn_in(a)).max().unwrap_or(50);
    if budget.steps < 10 * max_burn {
        return Err(Error::Parameter(format!("trace needs at least {} steps, got {}", 10 * max_burn, budget.steps)));
    }
    let path = CommonPath::new(rho, budget.steps, &RngStream::new(budget.master_seed, 0));
    let mut trace = LevelCurveTrace { c, rho, eta0, points: Vec::new(), stopped_at: None };

    for &alpha in alpha_grid {
        let at_zero = path.k_hat(alpha, 0.0);
        if at_zero.mean < c {
            trace.stopped_at = Some((
                alpha,
                Error::Infeasible(format!("K({alpha}, 0) = {} is below the level {c}", at_zero.mean)).to_string(),
            ));
            break;
        }
        let mut hi = eta0 + 0.5;
        while path.k_hat(alpha, hi).mean >= c {
            hi += 0.5;
            if hi > 8.0 {
                trace.stopped_at = Some((alpha, "no threshold below 8 brackets the level".into()));
                return Ok(trace);
            }
        }
        let mut lo = 0.0;
        while hi - lo > 1e-7 {
            let mid = 0.5 * (lo + hi);
            if path.k_hat(alpha, mid).mean >= c {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let eta = 0.5 * (lo + hi);
        let k = path.k_hat(alpha, eta);
        let accepted = (k.mean - c).abs() <= (2.0 * k.stderr).max(1e-6);

        let (h, solver_err, dh) = match h_with_error(alpha, eta, budget) {
            Ok(v) => v,
            Err(e) => {
                trace.stopped_at = Some((alpha, e.to_string()));
                break;
            }
        };
        let eta_err = k.stderr / dk_deta_approx(alpha, eta, rho)?.abs();
        trace.points.push(LevelCurvePoint {
            alpha,
            eta,
            k_value: k,
            h_value: h,
            h_error: solver_err + dh.abs() * eta_err,
            source: PointSource::MonteCarlo,
            accepted,
        });
    }
    Ok(trace)
}

/// Closed-form gradients, multiplier and constrained curvature at `(0, η₀)`.
pub fn local_optimality_report(eta0: f64, rho: f64) -> Result<OptimalityReport> {
    let lambda = lagrange_lambda(eta0, rho)?;
    let grad_k = grad_k_at0(eta0, rho)?;
    let grad_h = grad_survival_at0(eta0)?;
    let det = grad_h.d_alpha * grad_k.d_eta - grad_h.d_eta * grad_k.d_alpha;
    Ok(OptimalityReport {
        eta0,
        c: k_axis(eta0, rho)?,
        grad_k,
        grad_h,
        lambda,
        collinearity_residual: det.abs() / (grad_h.norm() * grad_k.norm()),
        constrained_second_derivative: constrained_second_derivative(eta0, rho)?,
    })
}

/// The axis point of a level curve, exact in both `K` and `H`.
pub fn axis_point(c: f64, rho: f64) -> Result<LevelCurvePoint> {
    let eta = eta_for_level(c, rho)?;
    Ok(LevelCurvePoint {
        alpha: 0.0,
        eta,
        k_value: McEstimate { mean: k_axis(eta, rho)?, stderr: 0.0, n: 1 },
        h_value: survival_at0(eta)?,
        h_error: 0.0,
        source: PointSource::ClosedForm,
        accepted: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImprovementCell {
    pub alpha: f64,
    pub eta: f64,
    pub r: f64,
}

/// Improvement ratio on the product grid, row-major in α.
pub fn improvement_table(alpha_grid: &[f64], eta_grid: &[f64]) -> Result<Vec<ImprovementCell>> {
    let mut out = Vec::with_capacity(alpha_grid.len() * eta_grid.len());
    for &alpha in alpha_grid {
        for &eta in eta_grid {
            out.push(ImprovementCell { alpha, eta, r: improvement_ratio(alpha, eta)? });
        }
    }
    Ok(out)
}
