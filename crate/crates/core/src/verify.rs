//! Cross-validation gates shared by `ntz verify` and the acceptance tests.
//!
//! Each gate runs a fixed set of checks and reports one status. Results hold
//! no timings, so a rerun with the same [`VerifyConfig`] serializes to the
//! same bytes regardless of the rayon pool size.

use serde::{Deserialize, Serialize};

use crate::closed_forms::{
    constrained_second_derivative_closed, d2e1_dalpha2_at0, e0, grad_k_at0, grad_survival_at0, improvement_ratio, k0,
    k_axis, survival_at0,
};
use crate::error::{ensure_finite, Error, Result};
use crate::gaussian::{pdf, RngStream};
use crate::optimizer::{eta_for_level, local_optimality_report, trace_level_curve, TraceBudget};
use crate::oracles::{e0_numeric, e1_numeric, k0_numeric, QuadConfig};
use crate::process::{estimate_h_mc, estimate_k_mc, ModelParams};
use crate::solver::{compute_h, fd_grad_h, solve_h, SolverConfig};

pub const GATE_COUNT: u8 = 9;
pub const K_STEPS: f64 = 1e7;
pub const H_REPLICATES: f64 = 1e6;
pub const Z_RANGE: (f64, f64) = (2.0, 6.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    /// Level `c` of the traced curve `K = c`.
    pub level: f64,
    pub rho: f64,
    /// Multiplier on Monte Carlo sample sizes; below 1 the MC gates are underpowered.
    pub budget: f64,
    /// Width of the Monte Carlo agreement bands in standard errors.
    pub z: f64,
    pub master_seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { level: 0.2 * pdf(1.0), rho: 0.1, budget: 1.0, z: 3.0, master_seed: 20_240_601 }
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_finite("level", self.level)?;
        ensure_finite("budget", self.budget)?;
        ensure_finite("z", self.z)?;
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Parameter(format!("rho must lie in (0, 1], got {}", self.rho)));
        }
        if !(self.budget > 0.0 && self.budget <= 100.0) {
            return Err(Error::Parameter(format!("budget must lie in (0, 100], got {}", self.budget)));
        }
        if !(Z_RANGE.0..=Z_RANGE.1).contains(&self.z) {
            return Err(Error::Parameter(format!("z must lie in [{}, {}], got {}", Z_RANGE.0, Z_RANGE.1, self.z)));
        }
        eta_for_level(self.level, self.rho).map(|_| ())
    }

    fn steps(&self) -> usize {
        (K_STEPS * self.budget).round() as usize
    }

    fn replicates(&self) -> u64 {
        ((H_REPLICATES * self.budget).round() as u64).max(2)
    }

    fn stream(&self, gate: u8) -> RngStream {
        RngStream::new(self.master_seed, u64::from(gate))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum GateStatus {
    Pass,
    Fail,
    /// A Monte Carlo gate run below its stated sample size; no verdict.
    Underpowered,
}

impl std::fmt::Display for GateStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GateStatus::Pass => "PASS",
            GateStatus::Fail => "FAIL",
            GateStatus::Underpowered => "UNDERPOWERED",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub label: String,
    pub detail: String,
    pub ok: bool,
}

impl Check {
    fn new(label: impl Into<String>, detail: String, ok: bool) -> Self {
        Self { label: label.into(), detail, ok }
    }

    fn close(label: impl Into<String>, value: f64, reference: f64, bound: f64) -> Self {
        let err = (value - reference).abs();
        Self::new(label, format!("value {value:?}, reference {reference:?}, |diff| {err:?} <= {bound:?}"), err <= bound)
    }

    fn relative(label: impl Into<String>, value: f64, reference: f64, rel: f64) -> Self {
        let err = ((value - reference) / reference).abs();
        Self::new(label, format!("value {value:?}, reference {reference:?}, rel err {err:?} <= {rel:?}"), err <= rel)
    }

    fn error(label: impl Into<String>, e: &Error) -> Self {
        Self::new(label, e.to_string(), false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateResult {
    pub id: u8,
    pub name: String,
    pub status: GateStatus,
    pub checks: Vec<Check>,
}

impl GateResult {
    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.ok)
    }
}

pub fn gate_name(id: u8) -> &'static str {
    match id {
        1 => "axis-exactness",
        2 => "k-closed-form-vs-mc",
        3 => "h-closed-form-vs-mc",
        4 => "solver-vs-mc",
        5 => "gradients",
        6 => "quadrature-oracles",
        7 => "lagrange",
        8 => "level-curve-optimality",
        9 => "improvement-ratio",
        _ => "unknown",
    }
}

/// Wall-clock allowance in seconds, where one applies.
pub fn time_limit(id: u8) -> Option<f64> {
    match id {
        1 => Some(10.0),
        2 | 3 => Some(60.0),
        4 => Some(300.0),
        8 => Some(600.0),
        _ => None,
    }
}

pub fn is_monte_carlo(id: u8) -> bool {
    matches!(id, 2 | 3 | 4 | 8)
}

pub fn run_gate(id: u8, cfg: &VerifyConfig) -> Result<GateResult> {
    cfg.validate()?;
    let checks = match id {
        1 => axis_exactness(),
        2 => k_vs_mc(cfg),
        3 => h_vs_mc(cfg),
        4 => solver_vs_mc(cfg),
        5 => gradients(cfg),
        6 => quadrature_oracles(cfg),
        7 => lagrange(cfg),
        8 => level_curve(cfg),
        9 => improvement(cfg),
        _ => return Err(Error::Parameter(format!("gates are numbered 1..={GATE_COUNT}, got {id}"))),
    };
    let status = if is_monte_carlo(id) && cfg.budget < 1.0 {
        GateStatus::Underpowered
    } else if checks.iter().all(|c| c.ok) {
        GateStatus::Pass
    } else {
        GateStatus::Fail
    };
    Ok(GateResult { id, name: gate_name(id).into(), status, checks })
}

pub fn run_all(cfg: &VerifyConfig) -> Result<Vec<GateResult>> {
    (1..=GATE_COUNT).map(|id| run_gate(id, cfg)).collect()
}

fn axis_exactness() -> Vec<Check> {
    let cfg = SolverConfig::default();
    [0.25, 0.5, 1.0]
        .iter()
        .map(|&eta| {
            let label = format!("eta={eta:?}");
            let grid = ModelParams::new(0.1, 0.0, eta).and_then(|p| solve_h(&p, &cfg));
            match (grid, survival_at0(eta)) {
                (Ok(g), Ok(exact)) => {
                    let sup = g.values.iter().fold(0.0f64, |m, v| m.max((v - exact).abs()));
                    Check::new(label, format!("sup |h - 1/F(-eta)| = {sup:?} <= 1e-8"), sup <= 1e-8)
                }
                (Err(e), _) | (_, Err(e)) => Check::error(label, &e),
            }
        })
        .collect()
}

fn k_vs_mc(cfg: &VerifyConfig) -> Vec<Check> {
    let seed = cfg.stream(2);
    [0.0, 0.5, 1.0, 2.0]
        .iter()
        .enumerate()
        .map(|(i, &eta)| {
            let label = format!("eta={eta:?}");
            let est =
                ModelParams::new(0.1, 0.0, eta).and_then(|p| estimate_k_mc(&p, cfg.steps(), &seed.derive(i as u64)));
            match est {
                Ok(e) => Check::close(label, e.mean, 0.2 * pdf(eta), cfg.z * e.stderr),
                Err(e) => Check::error(label, &e),
            }
        })
        .collect()
}

fn h_vs_mc(cfg: &VerifyConfig) -> Vec<Check> {
    let seed = cfg.stream(3);
    [0.0, 0.5, 1.0]
        .iter()
        .enumerate()
        .map(|(i, &eta)| {
            let label = format!("eta={eta:?}");
            let est = ModelParams::new(0.1, 0.0, eta)
                .and_then(|p| estimate_h_mc(&p, cfg.replicates(), &seed.derive(i as u64)));
            match (est, survival_at0(eta)) {
                (Ok(e), Ok(exact)) => Check::close(label, e.mean, exact, cfg.z * e.stderr),
                (Err(e), _) | (_, Err(e)) => Check::error(label, &e),
            }
        })
        .collect()
}

fn solver_vs_mc(cfg: &VerifyConfig) -> Vec<Check> {
    let seed = cfg.stream(4);
    let solver = SolverConfig::default();
    [(0.3, 0.5), (0.5, 1.0), (0.7, 0.5)]
        .iter()
        .enumerate()
        .map(|(i, &(alpha, eta))| {
            let label = format!("alpha={alpha:?},eta={eta:?}");
            let run = ModelParams::new(0.1, alpha, eta).and_then(|p| {
                Ok((compute_h(&p, &solver)?, estimate_h_mc(&p, cfg.replicates(), &seed.derive(i as u64))?))
            });
            match run {
                Ok((h, e)) => Check::close(label, h, e.mean, cfg.z * e.stderr),
                Err(e) => Check::error(label, &e),
            }
        })
        .collect()
}

/// `K₀ + E₀ + E₁` with the second hysteresis term taken from quadrature.
fn k_second_order(alpha: f64, eta: f64, rho: f64, quad: &QuadConfig) -> Result<f64> {
    let e1 = if alpha == 0.0 { 0.0 } else { e1_numeric(alpha, eta, rho, quad)? };
    Ok(k0(alpha, eta, rho)? + e0(alpha, eta, rho)? + e1)
}

fn gradients(cfg: &VerifyConfig) -> Vec<Check> {
    let solver = SolverConfig::default();
    let quad = QuadConfig { abs_tol: 1e-13, ..QuadConfig::default() };
    let mut out = Vec::new();
    for &eta in &[0.5, 1.0] {
        match (fd_grad_h(eta, &solver, 1e-3), grad_survival_at0(eta)) {
            (Ok(fd), Ok(exact)) => {
                out.push(Check::relative(format!("dH/dalpha eta={eta:?}"), fd.d_alpha, exact.d_alpha, 0.02));
                out.push(Check::relative(format!("dH/deta eta={eta:?}"), fd.d_eta, exact.d_eta, 0.02));
            }
            (Err(e), _) | (_, Err(e)) => out.push(Check::error(format!("grad H eta={eta:?}"), &e)),
        }
        let h = 1e-3;
        let fd_k = || -> Result<(f64, f64)> {
            let k = |a: f64| k_second_order(a, eta, cfg.rho, &quad);
            let d_alpha = (-3.0 * k(0.0)? + 4.0 * k(h)? - k(2.0 * h)?) / (2.0 * h);
            let d_eta = (k_axis(eta + 1e-4, cfg.rho)? - k_axis(eta - 1e-4, cfg.rho)?) / 2e-4;
            Ok((d_alpha, d_eta))
        };
        match (fd_k(), grad_k_at0(eta, cfg.rho)) {
            (Ok((da, de)), Ok(exact)) => {
                out.push(Check::close(format!("dK/dalpha eta={eta:?}"), da, exact.d_alpha, 1e-6));
                out.push(Check::close(format!("dK/deta eta={eta:?}"), de, exact.d_eta, 1e-6));
            }
            (Err(e), _) | (_, Err(e)) => out.push(Check::error(format!("grad K eta={eta:?}"), &e)),
        }
    }
    out
}

fn quadrature_oracles(cfg: &VerifyConfig) -> Vec<Check> {
    let quad = QuadConfig::default();
    let mut out = Vec::new();
    for &(alpha, eta) in &[(0.3, 0.5), (0.5, 1.0)] {
        let pairs: [(&str, Result<(f64, f64)>); 2] = [
            ("K0", k0_numeric(alpha, eta, cfg.rho, &quad).and_then(|n| Ok((n, k0(alpha, eta, cfg.rho)?)))),
            ("E0", e0_numeric(alpha, eta, cfg.rho, &quad).and_then(|n| Ok((n, e0(alpha, eta, cfg.rho)?)))),
        ];
        for (name, r) in pairs {
            let label = format!("{name} alpha={alpha:?},eta={eta:?}");
            out.push(match r {
                Ok((numeric, closed)) => Check::close(label, numeric, closed, 1e-8),
                Err(e) => Check::error(label, &e),
            });
        }
    }
    let fine = QuadConfig { abs_tol: 1e-13, ..quad };
    let d = 0.01;
    let curvature = || -> Result<(f64, f64)> {
        let e = |a: f64| e1_numeric(a, 1.0, cfg.rho, &fine);
        // One-sided second difference using E₁(0) = 0.
        let fd = (-5.0 * e(d)? + 4.0 * e(2.0 * d)? - e(3.0 * d)?) / (d * d);
        Ok((fd, d2e1_dalpha2_at0(1.0, cfg.rho)?))
    };
    out.push(match curvature() {
        Ok((fd, exact)) => Check::relative("d2E1/dalpha2 eta=1.0", fd, exact, 0.01),
        Err(e) => Check::error("d2E1/dalpha2 eta=1.0", &e),
    });
    out
}

fn lagrange(cfg: &VerifyConfig) -> Vec<Check> {
    let mut worst_residual = 0.0f64;
    let mut worst_gap = 0.0f64;
    let mut max_second = f64::NEG_INFINITY;
    let mut out = Vec::new();
    for i in 1..=60 {
        let eta = i as f64 * 0.05;
        match local_optimality_report(eta, cfg.rho).and_then(|r| Ok((r, constrained_second_derivative_closed(eta)?))) {
            Ok((r, closed)) => {
                worst_residual = worst_residual.max(r.collinearity_residual);
                worst_gap = worst_gap.max((r.constrained_second_derivative - closed).abs() / closed.abs().max(1.0));
                max_second = max_second.max(r.constrained_second_derivative);
            }
            Err(e) => out.push(Check::error(format!("eta={eta:?}"), &e)),
        }
    }
    out.push(Check::new("collinearity", format!("max residual {worst_residual:?} <= 1e-10"), worst_residual <= 1e-10));
    out.push(Check::new("negativity", format!("max second derivative {max_second:?} < 0"), max_second < 0.0));
    out.push(Check::new(
        "assembled-vs-closed",
        format!("max |diff| / max(|value|, 1) {worst_gap:?} <= 1e-9"),
        worst_gap <= 1e-9,
    ));
    out
}

fn level_curve(cfg: &VerifyConfig) -> Vec<Check> {
    let budget = TraceBudget { steps: cfg.steps(), master_seed: cfg.master_seed, ..TraceBudget::default() };
    let alphas = [0.05, 0.1, 0.2];
    let run = || -> Result<(f64, crate::optimizer::LevelCurveTrace)> {
        let eta0 = eta_for_level(cfg.level, cfg.rho)?;
        Ok((survival_at0(eta0)?, trace_level_curve(cfg.level, cfg.rho, &alphas, &budget)?))
    };
    let (h0, trace) = match run() {
        Ok(v) => v,
        Err(e) => return vec![Check::error("trace", &e)],
    };
    let mut out = Vec::new();
    if let Some((alpha, reason)) = &trace.stopped_at {
        out.push(Check::new(format!("alpha={alpha:?}"), format!("tracing stopped: {reason}"), false));
    }
    for p in &trace.points {
        let bound = h0 + cfg.z * p.h_error;
        out.push(Check::new(
            format!("alpha={:?}", p.alpha),
            format!(
                "eta {:?}, K {:?} +- {:?}, accepted {}, H {:?} <= H0 {:?} + z*err {:?}",
                p.eta,
                p.k_value.mean,
                p.k_value.stderr,
                p.accepted,
                p.h_value,
                h0,
                cfg.z * p.h_error
            ),
            p.accepted && p.h_value <= bound,
        ));
    }
    out
}

fn improvement(cfg: &VerifyConfig) -> Vec<Check> {
    let etas: Vec<f64> = (1..=40).map(|i| i as f64 * 0.1).collect();
    let alphas: Vec<f64> = (1..=99).map(|i| i as f64 * 0.01).collect();
    let mut nonzero_axis = Vec::new();
    let mut min_r = f64::INFINITY;
    let mut worst_identity = 0.0f64;
    let mut errors = Vec::new();
    for &eta in &etas {
        match improvement_ratio(0.0, eta) {
            Ok(0.0) => {}
            Ok(r) => nonzero_axis.push((eta, r)),
            Err(e) => errors.push(Check::error(format!("R(0,{eta:?})"), &e)),
        }
        for &alpha in &alphas {
            let cell = || -> Result<(f64, f64)> {
                let r = improvement_ratio(alpha, eta)?;
                let smoothed = k0(alpha, eta, cfg.rho)? + e0(alpha, eta, cfg.rho)?;
                let gain = k_axis(eta, cfg.rho)? - smoothed;
                Ok((r, (gain - r * smoothed).abs()))
            };
            match cell() {
                Ok((r, gap)) => {
                    min_r = min_r.min(r);
                    worst_identity = worst_identity.max(gap);
                }
                Err(e) => errors.push(Check::error(format!("alpha={alpha:?},eta={eta:?}"), &e)),
            }
        }
    }
    let mut out = errors;
    out.push(Check::new("axis-zero", format!("nonzero R(0, eta): {nonzero_axis:?}"), nonzero_axis.is_empty()));
    out.push(Check::new("positive", format!("min R on (0, 0.99] x (0, 4]: {min_r:?} > 0"), min_r > 0.0));
    out.push(Check::new(
        "identity",
        format!("max |K_axis - K_s - R K_s| {worst_identity:?} <= 1e-10"),
        worst_identity <= 1e-10,
    ));
    out
}
