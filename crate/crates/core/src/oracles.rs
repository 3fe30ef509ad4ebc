//! Quadrature of the defining integrals behind the correlation closed forms.
//!
//! These never call the closed forms they are meant to check (except
//! [`k_truncated`], which is a sum of terms by definition).

use serde::{Deserialize, Serialize};

use crate::closed_forms::{e0, k0};
use crate::error::{ensure_finite, Error, Result};
use crate::gaussian::pdf;
use crate::process::check_alpha;
use crate::quadrature::adaptive_simpson_2d;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadConfig {
    pub abs_tol: f64,
    /// Gaussian variables are integrated over `[−domain_radius, domain_radius]`.
    pub domain_radius: f64,
    /// Bisection budget for each one-dimensional adaptive pass.
    pub max_subdivisions: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self { abs_tol: 1e-10, domain_radius: 10.0, max_subdivisions: 1 << 20 }
    }
}

impl QuadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.abs_tol.is_finite()) {
            return Err(Error::Parameter(format!("abs_tol must be positive, got {}", self.abs_tol)));
        }
        if !(self.domain_radius >= 8.0 && self.domain_radius.is_finite()) {
            return Err(Error::Parameter(format!("domain_radius must be >= 8, got {}", self.domain_radius)));
        }
        if self.max_subdivisions == 0 {
            return Err(Error::Parameter("max_subdivisions must be positive".into()));
        }
        Ok(())
    }
}

fn check(alpha: f64, eta: f64, rho: f64, cfg: &QuadConfig) -> Result<()> {
    cfg.validate()?;
    check_alpha(alpha)?;
    ensure_finite("eta", eta)?;
    ensure_finite("rho", rho)?;
    if eta < 0.0 {
        return Err(Error::Parameter(format!("eta must be >= 0, got {eta}")));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Parameter(format!("rho must lie in (0, 1], got {rho}")));
    }
    Ok(())
}

fn check_positive_alpha(alpha: f64) -> Result<()> {
    if alpha <= 0.0 {
        return Err(Error::Parameter(format!("alpha must lie in (0, 0.99], got {alpha}")));
    }
    Ok(())
}

/// `ρ[E(X; X̃ ≥ η) − E(X; X̃ ≤ −η)]` with `X̃ = √(1−α²)X + αZ`, as two double integrals.
pub fn k0_numeric(alpha: f64, eta: f64, rho: f64, cfg: &QuadConfig) -> Result<f64> {
    check(alpha, eta, rho, cfg)?;
    let r = cfg.domain_radius;
    let s = (1.0 - alpha * alpha).sqrt();
    let tol = 0.25 * cfg.abs_tol / rho;
    let integrand = |z: f64, x: f64| x * pdf(x) * pdf(z);
    let upper =
        adaptive_simpson_2d(integrand, -r, r, |z| (eta - alpha * z) / s, |_| r, (-r, r), tol, cfg.max_subdivisions)?;
    let lower =
        adaptive_simpson_2d(integrand, -r, r, |_| -r, |z| (-eta - alpha * z) / s, (-r, r), tol, cfg.max_subdivisions)?;
    Ok(rho * (upper - lower))
}

/// `2ρ E(X_t; −η < X̃_t < η, X̃_{t−1} ≥ η)` as a double integral over the strip.
pub fn e0_numeric(alpha: f64, eta: f64, rho: f64, cfg: &QuadConfig) -> Result<f64> {
    check(alpha, eta, rho, cfg)?;
    check_positive_alpha(alpha)?;
    let r = cfg.domain_radius;
    let s = (1.0 - alpha * alpha).sqrt();
    let v = adaptive_simpson_2d(
        |y: f64, x: f64| x * pdf(x) * pdf(y),
        eta.min(r),
        r,
        |y| (-alpha * y - eta) / s,
        |y| (-alpha * y + eta) / s,
        (-r, r),
        0.5 * cfg.abs_tol / rho,
        cfg.max_subdivisions,
    )?;
    Ok(2.0 * rho * v)
}

/// Second hysteresis term: outer region `z ≥ η`, `|√(1−α²)y + αz| ≤ η`, inner
/// x-integral done with the antiderivative of `x f(x)`.
pub fn e1_numeric(alpha: f64, eta: f64, rho: f64, cfg: &QuadConfig) -> Result<f64> {
    check(alpha, eta, rho, cfg)?;
    check_positive_alpha(alpha)?;
    let r = cfg.domain_radius;
    let s = (1.0 - alpha * alpha).sqrt();
    let v = adaptive_simpson_2d(
        |z: f64, y: f64| {
            let u = alpha * z + s * y;
            pdf(y) * pdf(z) * (pdf((eta + alpha * u) / s) - pdf((eta - alpha * u) / s))
        },
        eta.min(r),
        r,
        |z| (-eta - alpha * z) / s,
        |z| (eta - alpha * z) / s,
        (-r, r),
        0.5 * cfg.abs_tol / rho,
        cfg.max_subdivisions,
    )?;
    Ok(2.0 * rho * v)
}

/// `K₀ + E₀ + E₁`, the correlation up to an `O(α³)` remainder.
pub fn k_truncated(alpha: f64, eta: f64, rho: f64, cfg: &QuadConfig) -> Result<f64> {
    check(alpha, eta, rho, cfg)?;
    if alpha > 0.5 {
        return Err(Error::Parameter(format!("truncated series needs alpha <= 0.5, got {alpha}")));
    }
    let e1 = if alpha == 0.0 { 0.0 } else { e1_numeric(alpha, eta, rho, cfg)? };
    Ok(k0(alpha, eta, rho)? + e0(alpha, eta, rho)? + e1)
}
