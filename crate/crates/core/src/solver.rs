//! Expected survival time `h(x)` from the integral equation
//!
//! ```text
//! h(x) = 1 + ∫_{−η}^{∞} h(y) k(x, y) dy,   k(x, y) = f((y − αx)/s)/s,   s = √(1−α²)
//! ```
//!
//! discretized by Simpson's rule on `[−η, x_max]` (Nyström method). The
//! damped operators `T_β` multiply the integrand by `φ_β(y)`, which is 1 for
//! `y < 0` and `e^{−βy}` for `y > 1`. Solutions are continued along a
//! decreasing β schedule, extrapolated linearly to β = 0 and then polished
//! against the undamped truncated operator.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_forms::{survival_at0, GradPair};
use crate::error::{ensure_finite, Error, Result};
use crate::gaussian::{inv_cdf, pdf, sf};
use crate::process::{check_alpha, ModelParams};
use crate::quadrature::simpson_weights;

/// Largest threshold the solver accepts.
pub const MAX_SOLVER_ETA: f64 = 6.0;
/// Allowed kernel mass lost beyond `x_max`.
pub const TRUNCATION_MASS: f64 = 1e-12;

const ANDERSON_WINDOW: usize = 20;
const ROUNDING_FLOOR: f64 = 64.0 * f64::EPSILON;
const DIRECT_AFTER: usize = 400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub x_max: f64,
    /// Odd number of grid nodes on `[−η, x_max]`.
    pub n_grid: usize,
    /// Strictly decreasing positive damping parameters.
    pub beta_schedule: Vec<f64>,
    /// Sup-norm fixed-point tolerance.
    pub fp_tol: f64,
    pub max_iter: usize,
    /// Widen `x_max` when the kernel would lose more than [`TRUNCATION_MASS`]
    /// past it; otherwise report a truncation error.
    pub extend_domain: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            x_max: 12.0,
            n_grid: 2001,
            beta_schedule: vec![0.2, 0.1, 0.05, 0.02, 0.01, 0.005],
            fp_tol: 1e-10,
            max_iter: 100_000,
            extend_domain: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_finite("x_max", self.x_max)?;
        if self.x_max <= 0.0 {
            return Err(Error::Parameter(format!("x_max must be positive, got {}", self.x_max)));
        }
        if self.n_grid < 201 || self.n_grid.is_multiple_of(2) {
            return Err(Error::Parameter(format!("n_grid must be odd and >= 201, got {}", self.n_grid)));
        }
        if self.beta_schedule.is_empty() {
            return Err(Error::Parameter("beta_schedule must not be empty".into()));
        }
        if self.beta_schedule.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(Error::Parameter("beta_schedule entries must be positive".into()));
        }
        if self.beta_schedule.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Parameter("beta_schedule must be strictly decreasing".into()));
        }
        if !(self.fp_tol > 0.0 && self.fp_tol.is_finite()) {
            return Err(Error::Parameter(format!("fp_tol must be positive, got {}", self.fp_tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Parameter("max_iter must be positive".into()));
        }
        Ok(())
    }

    /// Upper end of the x-domain actually used for `(alpha, eta)`.
    pub fn effective_x_max(&self, alpha: f64) -> Result<f64> {
        let needed = required_x_max(alpha);
        if self.x_max >= needed {
            Ok(self.x_max)
        } else if self.extend_domain {
            Ok(needed)
        } else {
            Err(Error::Truncation(format!(
                "x_max = {} loses more than {TRUNCATION_MASS:e} kernel mass at alpha = {alpha}; need x_max >= {needed:.4}",
                self.x_max
            )))
        }
    }
}

/// Smallest `x_max` with `P(next state > x_max | state = x_max) ≤ TRUNCATION_MASS`.
pub fn required_x_max(alpha: f64) -> f64 {
    let z = -inv_cdf(TRUNCATION_MASS);
    z * (1.0 - alpha * alpha).sqrt() / (1.0 - alpha)
}

/// Damping multiplier `φ_β`, with a cubic Hermite bridge on `[0, 1]`.
pub fn damping(beta: f64, y: f64) -> f64 {
    if y <= 0.0 || beta == 0.0 {
        1.0
    } else if y >= 1.0 {
        (-beta * y).exp()
    } else {
        let e = (-beta).exp();
        1.0 + (e - 1.0) * y * y * (3.0 - 2.0 * y) - beta * e * y * y * (y - 1.0)
    }
}

/// Simpson-Nyström discretization of the operator on a uniform grid.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub alpha: f64,
    pub eta: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Row-major `n × n` matrix `w_j k(x_i, y_j)`.
    matrix: Vec<f64>,
}

impl Discretization {
    pub fn new(alpha: f64, eta: f64, x_max: f64, n: usize) -> Result<Self> {
        check_alpha(alpha)?;
        ensure_finite("eta", eta)?;
        if n < 3 || n.is_multiple_of(2) {
            return Err(Error::Parameter(format!("grid needs an odd node count >= 3, got {n}")));
        }
        if x_max.is_nan() || x_max <= -eta {
            return Err(Error::Parameter(format!("x_max = {x_max} must exceed -eta = {}", -eta)));
        }
        let step = (x_max + eta) / (n - 1) as f64;
        let nodes: Vec<f64> = (0..n).map(|j| if j + 1 == n { x_max } else { -eta + j as f64 * step }).collect();
        let weights = simpson_weights(n, step);
        let s = (1.0 - alpha * alpha).sqrt();
        let mut matrix = vec![0.0; n * n];
        matrix.par_chunks_mut(n).zip(nodes.par_iter()).for_each(|(row, &x)| {
            let centre = alpha * x;
            for ((a, &y), &w) in row.iter_mut().zip(&nodes).zip(&weights) {
                let z = (y - centre) / s;
                *a = if z.abs() < 40.0 { w * pdf(z) / s } else { 0.0 };
            }
        });
        Ok(Self { alpha, eta, nodes, weights, matrix })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn damping_vector(&self, beta: f64) -> Vec<f64> {
        self.nodes.iter().map(|&y| damping(beta, y)).collect()
    }

    /// `out = 1 + A (damp ∘ g)`.
    pub fn apply(&self, g: &[f64], damp: &[f64], out: &mut [f64]) {
        let n = self.len();
        let v: Vec<f64> = g.iter().zip(damp).map(|(a, b)| a * b).collect();
        out.par_iter_mut().zip(self.matrix.par_chunks(n)).for_each(|(o, row)| {
            *o = 1.0 + row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        });
    }

    /// Exact solution of the discrete equation `g = 1 + A (damp ∘ g)` by LU.
    fn solve_direct(&self, damp: &[f64]) -> Result<Vec<f64>> {
        let n = self.len();
        let mut m = DMatrix::from_row_slice(n, n, &self.matrix);
        for (j, &d) in damp.iter().enumerate() {
            m.column_mut(j).scale_mut(-d);
        }
        for i in 0..n {
            m[(i, i)] += 1.0;
        }
        m.lu()
            .solve(&DVector::from_element(n, 1.0))
            .map(|v| v.as_slice().to_vec())
            .ok_or_else(|| Error::Convergence("discretized operator is singular".into()))
    }

    /// Fixed point of `T_β` from `start`.
    ///
    /// Anderson iteration first; if it has not converged after
    /// `DIRECT_AFTER` sweeps (slowly mixing chains, α near 1) the affine
    /// equation is solved directly and the result is refined by iteration.
    fn solve_stage(&self, beta: f64, start: Vec<f64>, tol: f64, budget: usize) -> Result<(Vec<f64>, usize)> {
        let damp = self.damping_vector(beta);
        let op = |g: &[f64], out: &mut [f64]| self.apply(g, &damp, out);
        let first = budget.min(DIRECT_AFTER);
        match anderson(&op, start, tol, first) {
            Ok(r) => Ok(r),
            Err(Error::Convergence(_)) if budget > first => {
                let direct = self.solve_direct(&damp)?;
                let (sol, it) = anderson(&op, direct, tol, budget - first)?;
                Ok((sol, first + it))
            }
            Err(e) => Err(e),
        }
    }

    /// Sup-norm of `T_β g − g`.
    pub fn defect(&self, g: &[f64], beta: f64) -> f64 {
        let mut out = vec![0.0; self.len()];
        self.apply(g, &self.damping_vector(beta), &mut out);
        sup_diff(&out, g)
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Solution of the integral equation on its grid, with diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HGrid {
    pub eta: f64,
    pub alpha: f64,
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
    /// Damping of the operator the values solve; 0 after the final undamped stage.
    pub beta_used: f64,
    pub iterations: usize,
    /// Sup-norm defect under the undamped truncated operator.
    pub residual: f64,
    /// Sup-norm gap between the β→0 extrapolation and the polished solution.
    pub extrapolation_gap: f64,
    /// Largest decrease between neighbouring values (0 when monotone).
    pub monotonicity_violation: f64,
}

impl HGrid {
    /// Constant initial guess on the grid of `disc`.
    pub fn constant(disc: &Discretization, value: f64) -> Self {
        Self {
            eta: disc.eta,
            alpha: disc.alpha,
            nodes: disc.nodes.clone(),
            values: vec![value; disc.len()],
            beta_used: f64::NAN,
            iterations: 0,
            residual: f64::NAN,
            extrapolation_gap: 0.0,
            monotonicity_violation: 0.0,
        }
    }

    pub fn x_max(&self) -> f64 {
        *self.nodes.last().expect("grid is never empty")
    }

    fn step(&self) -> f64 {
        (self.x_max() + self.eta) / (self.nodes.len() - 1) as f64
    }

    /// Nyström interpolant `h(x) = 1 + Σ_j w_j k(x, y_j) h_j` of the undamped equation.
    pub fn eval(&self, x: f64) -> f64 {
        let s = (1.0 - self.alpha * self.alpha).sqrt();
        let w = simpson_weights(self.nodes.len(), self.step());
        let centre = self.alpha * x;
        1.0 + self
            .nodes
            .iter()
            .zip(&w)
            .zip(&self.values)
            .map(|((&y, &wj), &hj)| {
                let z = (y - centre) / s;
                if z.abs() < 40.0 {
                    wj * pdf(z) / s * hj
                } else {
                    0.0
                }
            })
            .sum::<f64>()
    }

    /// `H = ∫_η^∞ h f dx / F(−η)`, by Simpson's rule on the interpolant.
    pub fn survival_mean(&self) -> f64 {
        let eta = self.eta;
        let upper = self.x_max().min(eta.max(0.0) + 12.0);
        let m = 2001;
        let step = (upper - eta) / (m - 1) as f64;
        let w = simpson_weights(m, step);
        let integral: f64 = (0..m)
            .into_par_iter()
            .map(|i| {
                let x = eta + i as f64 * step;
                w[i] * self.eval(x) * pdf(x)
            })
            .collect::<Vec<f64>>()
            .iter()
            .sum();
        integral / sf(eta)
    }

    /// Envelope `h(x) ≤ A₁ + A₂ ln x` for `x ≥ r`, from the largest growth rate in `ln x`.
    pub fn log_growth_envelope(&self, r: f64) -> Option<(f64, f64)> {
        let pts: Vec<(f64, f64)> =
            self.nodes.iter().zip(&self.values).filter(|(x, _)| **x >= r).map(|(x, v)| (x.ln(), *v)).collect();
        if pts.len() < 2 || r <= 0.0 {
            return None;
        }
        let a2 = pts.windows(2).map(|p| (p[1].1 - p[0].1) / (p[1].0 - p[0].0)).fold(0.0, f64::max);
        Some((pts[0].1 - a2 * pts[0].0, a2))
    }
}

/// Anderson-accelerated fixed-point iteration for `g = T(g)`.
///
/// Returns the last image `T(x_k)` and the number of operator applications.
fn anderson<T>(op: &T, mut x: Vec<f64>, tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize)>
where
    T: Fn(&[f64], &mut [f64]),
{
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut d_f: Vec<Vec<f64>> = Vec::new();
    let mut d_g: Vec<Vec<f64>> = Vec::new();
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;

    for it in 1..=max_iter {
        op(&x, &mut g);
        let f: Vec<f64> = g.iter().zip(&x).map(|(a, b)| a - b).collect();
        let res = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !res.is_finite() {
            return Err(Error::Convergence("fixed-point iteration diverged".into()));
        }
        // Below this the defect is dominated by rounding in the matrix-vector product.
        let floor = ROUNDING_FLOOR * g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if res <= tol.max(floor) {
            return Ok((g, it));
        }
        if res < 0.5 * best {
            best = res;
            since_best = 0;
        } else {
            since_best += 1;
        }

        if let Some((f_old, g_old)) = prev.take() {
            d_f.push(f.iter().zip(&f_old).map(|(a, b)| a - b).collect());
            d_g.push(g.iter().zip(&g_old).map(|(a, b)| a - b).collect());
            if d_f.len() > ANDERSON_WINDOW {
                d_f.remove(0);
                d_g.remove(0);
            }
        }
        // Restart from a plain step when the accelerated sequence stalls.
        if since_best > 4 * ANDERSON_WINDOW {
            d_f.clear();
            d_g.clear();
            since_best = 0;
            best = res;
        }

        let next = if d_f.is_empty() {
            g.clone()
        } else {
            let m = d_f.len();
            let a = DMatrix::from_fn(n, m, |i, j| d_f[j][i]);
            let b = DVector::from_column_slice(&f);
            let svd = a.svd(true, true);
            let cutoff = 1e-13 * svd.singular_values.max();
            match svd.solve(&b, cutoff) {
                Ok(gamma) if gamma.iter().all(|v| v.is_finite()) => {
                    let mut next = g.clone();
                    for (j, col) in d_g.iter().enumerate() {
                        let c = gamma[j];
                        for (v, d) in next.iter_mut().zip(col) {
                            *v -= c * d;
                        }
                    }
                    next
                }
                _ => {
                    d_f.clear();
                    d_g.clear();
                    g.clone()
                }
            }
        };
        prev = Some((f, g.clone()));
        x = next;
    }
    Err(Error::Convergence(format!("fixed point not reached within {max_iter} iterations")))
}

/// One application of `T_β` to a grid function.
pub fn apply_t_beta(g: &HGrid, beta: f64) -> Result<HGrid> {
    ensure_finite("beta", beta)?;
    if beta < 0.0 {
        return Err(Error::Parameter(format!("beta must be >= 0, got {beta}")));
    }
    if g.nodes.len() != g.values.len() {
        return Err(Error::Parameter("grid values do not match grid nodes".into()));
    }
    let n = g.nodes.len();
    if n < 3 || n.is_multiple_of(2) || g.nodes[0] != -g.eta {
        return Err(Error::Parameter("grid must have an odd node count and start at -eta".into()));
    }
    let disc = Discretization::new(g.alpha, g.eta, g.x_max(), n)?;
    if sup_diff(&disc.nodes, &g.nodes) > 1e-12 * (1.0 + g.x_max().abs()) {
        return Err(Error::Parameter("grid nodes are not uniformly spaced".into()));
    }
    let mut out = g.clone();
    disc.apply(&g.values, &disc.damping_vector(beta), &mut out.values);
    out.beta_used = beta;
    out.residual = f64::NAN;
    Ok(out)
}

fn check_solver_params(params: &ModelParams) -> Result<()> {
    check_alpha(params.alpha)?;
    ensure_finite("eta", params.eta)?;
    if params.eta < 0.0 {
        return Err(Error::Parameter(format!("eta must be >= 0, got {}", params.eta)));
    }
    if params.eta > MAX_SOLVER_ETA {
        return Err(Error::UnsupportedRegion(format!("solver supports eta <= {MAX_SOLVER_ETA}, got {}", params.eta)));
    }
    Ok(())
}

/// Solve for `h` on `[−η, x_max]` by β-continuation, extrapolation and an undamped polish.
pub fn solve_h(params: &ModelParams, cfg: &SolverConfig) -> Result<HGrid> {
    check_solver_params(params)?;
    cfg.validate()?;
    let (alpha, eta) = (params.alpha, params.eta);
    let x_max = cfg.effective_x_max(alpha)?;
    let disc = Discretization::new(alpha, eta, x_max, cfg.n_grid)?;

    let mut h = vec![survival_at0(eta)?; disc.len()];
    let mut iterations = 0;
    let mut last_two: Vec<(f64, Vec<f64>)> = Vec::new();
    for &beta in &cfg.beta_schedule {
        let budget = cfg.max_iter.saturating_sub(iterations).max(1);
        let (sol, it) = disc.solve_stage(beta, h, cfg.fp_tol, budget)?;
        iterations += it;
        h = sol.clone();
        last_two.push((beta, sol));
        if last_two.len() > 2 {
            last_two.remove(0);
        }
    }
    let extrapolated = match last_two.as_slice() {
        [(b1, h1), (b2, h2)] => h2.iter().zip(h1).map(|(v2, v1)| v2 + b2 * (v2 - v1) / (b1 - b2)).collect(),
        _ => h,
    };

    let budget = cfg.max_iter.saturating_sub(iterations).max(1);
    let (values, it) = disc.solve_stage(0.0, extrapolated.clone(), cfg.fp_tol, budget)?;
    iterations += it;

    let residual = disc.defect(&values, 0.0);
    let monotonicity_violation = values.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
    Ok(HGrid {
        eta,
        alpha,
        nodes: disc.nodes,
        extrapolation_gap: sup_diff(&values, &extrapolated),
        values,
        beta_used: 0.0,
        iterations,
        residual,
        monotonicity_violation,
    })
}

/// Expected survival time `H(α, η)` started above the upper barrier.
pub fn compute_h(params: &ModelParams, cfg: &SolverConfig) -> Result<f64> {
    Ok(solve_h(params, cfg)?.survival_mean())
}

fn h_at(alpha: f64, eta: f64, cfg: &SolverConfig) -> Result<f64> {
    compute_h(&ModelParams { rho: 0.5, alpha, eta }, cfg)
}

/// Finite-difference gradient of `H` at `α = 0`: one-sided second order in
/// α, central in η (one-sided second order when `η < step`).
pub fn fd_grad_h(eta: f64, cfg: &SolverConfig, step: f64) -> Result<GradPair> {
    ensure_finite("step", step)?;
    if !(1e-4..=1e-2).contains(&step) {
        return Err(Error::Parameter(format!("step must lie in [1e-4, 1e-2], got {step}")));
    }
    let h0 = h_at(0.0, eta, cfg)?;
    let d_alpha = (-3.0 * h0 + 4.0 * h_at(step, eta, cfg)? - h_at(2.0 * step, eta, cfg)?) / (2.0 * step);
    let d_eta = if eta >= step {
        (h_at(0.0, eta + step, cfg)? - h_at(0.0, eta - step, cfg)?) / (2.0 * step)
    } else {
        (-3.0 * h0 + 4.0 * h_at(0.0, eta + step, cfg)? - h_at(0.0, eta + 2.0 * step, cfg)?) / (2.0 * step)
    };
    Ok(GradPair { d_alpha, d_eta })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourCell {
    pub alpha: f64,
    pub eta: f64,
    pub h: Option<f64>,
    /// `"ok"` or the error message of the failed solve.
    pub status: String,
}

impl ContourCell {
    pub fn is_ok(&self) -> bool {
        self.h.is_some()
    }
}

/// `H` on the product grid, row-major in α. Failed cells are kept with their error.
pub fn contour_grid(alpha_grid: &[f64], eta_grid: &[f64], cfg: &SolverConfig) -> Vec<ContourCell> {
    let cells: Vec<(f64, f64)> = alpha_grid.iter().flat_map(|&a| eta_grid.iter().map(move |&e| (a, e))).collect();
    cells
        .into_par_iter()
        .map(|(alpha, eta)| match h_at(alpha, eta, cfg) {
            Ok(h) => ContourCell { alpha, eta, h: Some(h), status: "ok".into() },
            Err(e) => ContourCell { alpha, eta, h: None, status: e.to_string() },
        })
        .collect()
}

/// Cells where `H` decreases by more than `slack` when α (or η) moves to the next grid value.
pub fn monotonicity_flags(cells: &[ContourCell], n_eta: usize, slack: f64) -> Vec<(usize, usize)> {
    let mut flags = Vec::new();
    if n_eta == 0 {
        return flags;
    }
    let n_alpha = cells.len() / n_eta;
    let get = |i: usize, j: usize| cells[i * n_eta + j].h;
    for i in 0..n_alpha {
        for j in 0..n_eta {
            let here = get(i, j);
            let up_alpha = (i + 1 < n_alpha).then(|| get(i + 1, j)).flatten();
            let up_eta = (j + 1 < n_eta).then(|| get(i, j + 1)).flatten();
            if let Some(h) = here {
                if up_alpha.is_some_and(|n| n < h - slack) || up_eta.is_some_and(|n| n < h - slack) {
                    flags.push((i, j));
                }
            }
        }
    }
    flags
}
