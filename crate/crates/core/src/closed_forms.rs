//! Explicit formulas for `K`, `h`, `H` and their derivatives at `α = 0`,
//! the Lagrange multiplier, the constrained second derivative and the
//! improvement ratio.
//!
//! Everything is written in terms of `f(η)` and the upper tail `F(−η)`, so no
//! `1 − F(η)` cancellation occurs.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{ensure_finite, Error, Result};
use crate::gaussian::{cdf, pdf, sf};
use crate::process::check_alpha;

/// Largest threshold for which `F(−η)²` is safely representable.
pub const MAX_ETA: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradPair {
    pub d_alpha: f64,
    pub d_eta: f64,
}

impl GradPair {
    pub fn norm(&self) -> f64 {
        self.d_alpha.hypot(self.d_eta)
    }
}

/// Symmetric 2×2 Hessian in `(α, η)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HessTriple {
    pub d_aa: f64,
    pub d_ae: f64,
    pub d_ee: f64,
}

impl HessTriple {
    /// Quadratic form `vᵀ H v`.
    pub fn quad(&self, v: (f64, f64)) -> f64 {
        self.d_aa * v.0 * v.0 + 2.0 * self.d_ae * v.0 * v.1 + self.d_ee * v.1 * v.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub eta0: f64,
    pub c: f64,
    pub grad_k: GradPair,
    pub grad_h: GradPair,
    pub lambda: f64,
    pub collinearity_residual: f64,
    pub constrained_second_derivative: f64,
}

impl OptimalityReport {
    pub const RESIDUAL_TOL: f64 = 1e-10;

    pub fn passes(&self) -> bool {
        self.collinearity_residual <= Self::RESIDUAL_TOL && self.constrained_second_derivative < 0.0
    }
}

fn check_eta(eta: f64) -> Result<()> {
    ensure_finite("eta", eta)?;
    if eta < 0.0 {
        return Err(Error::Parameter(format!("eta must be >= 0, got {eta}")));
    }
    Ok(())
}

fn check_rho(rho: f64) -> Result<()> {
    ensure_finite("rho", rho)?;
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Parameter(format!("rho must lie in (0, 1], got {rho}")));
    }
    Ok(())
}

/// Threshold checks for the survival-time formulas: `f(η)` and `F(−η)`.
fn tail_terms(eta: f64) -> Result<(f64, f64)> {
    check_eta(eta)?;
    if eta > MAX_ETA {
        return Err(Error::UnsupportedRegion(format!("eta = {eta} exceeds {MAX_ETA}; F(-eta)^2 underflows")));
    }
    Ok((pdf(eta), sf(eta)))
}

/// Strong-signal part `K₀ = 2ρ f(η) √(1−α²)`.
pub fn k0(alpha: f64, eta: f64, rho: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_eta(eta)?;
    check_rho(rho)?;
    Ok(2.0 * rho * pdf(eta) * (1.0 - alpha * alpha).sqrt())
}

/// First hysteresis term `E₀ = K₀ · (F(aη) − F(η/a))` with `a = √((1−α)/(1+α))`.
pub fn e0(alpha: f64, eta: f64, rho: f64) -> Result<f64> {
    let base = k0(alpha, eta, rho)?;
    let a = ((1.0 - alpha) / (1.0 + alpha)).sqrt();
    Ok(base * (cdf(a * eta) - cdf(eta / a)))
}

/// `K(0, η) = 2ρ f(η)`.
pub fn k_axis(eta: f64, rho: f64) -> Result<f64> {
    check_eta(eta)?;
    check_rho(rho)?;
    Ok(2.0 * rho * pdf(eta))
}

pub fn grad_k_at0(eta: f64, rho: f64) -> Result<GradPair> {
    check_eta(eta)?;
    check_rho(rho)?;
    Ok(GradPair { d_alpha: -(2.0 * rho / PI) * eta * (-eta * eta).exp(), d_eta: -2.0 * rho * eta * pdf(eta) })
}

/// `∂²E₁/∂α²(0, η) = −8ρη f(η)² (F(η) − F(−η) − 2η f(η))`.
pub fn d2e1_dalpha2_at0(eta: f64, rho: f64) -> Result<f64> {
    check_eta(eta)?;
    check_rho(rho)?;
    let f = pdf(eta);
    Ok(-8.0 * rho * eta * f * f * (cdf(eta) - sf(eta) - 2.0 * eta * f))
}

pub fn hess_k_at0(eta: f64, rho: f64) -> Result<HessTriple> {
    let d2e1 = d2e1_dalpha2_at0(eta, rho)?;
    let f = pdf(eta);
    Ok(HessTriple {
        d_aa: -2.0 * rho * f + d2e1,
        d_ae: (2.0 * rho / PI) * (2.0 * eta * eta - 1.0) * (-eta * eta).exp(),
        d_ee: 2.0 * rho * (eta * eta - 1.0) * f,
    })
}

/// `h(0, η, x) = 1/F(−η)`, the same for every start `x`.
pub fn h_at0(eta: f64) -> Result<f64> {
    let (_, tail) = tail_terms(eta)?;
    Ok(1.0 / tail)
}

pub fn dh_dalpha_at0(eta: f64, x: f64) -> Result<f64> {
    let (f, tail) = tail_terms(eta)?;
    ensure_finite("x", x)?;
    Ok(f * f / (tail * tail) + f / tail * x)
}

pub fn dh_deta_at0(eta: f64) -> Result<f64> {
    let (f, tail) = tail_terms(eta)?;
    Ok(f / (tail * tail))
}

fn second_moment_bracket(f: f64, tail: f64, eta: f64) -> f64 {
    f * f * f / (tail * tail) - eta * f * f / tail + f / tail - f
}

/// `∫_η^∞ ∂²h/∂α²(0, η, x) f(x) dx`.
pub fn d2h_dalpha2_integral_at0(eta: f64) -> Result<f64> {
    let (f, tail) = tail_terms(eta)?;
    Ok(4.0 * f * second_moment_bracket(f, tail, eta))
}

/// `H(0, η) = 1/F(−η)`.
pub fn survival_at0(eta: f64) -> Result<f64> {
    h_at0(eta)
}

pub fn grad_survival_at0(eta: f64) -> Result<GradPair> {
    let (f, tail) = tail_terms(eta)?;
    Ok(GradPair { d_alpha: 2.0 * f * f / (tail * tail), d_eta: f / (tail * tail) })
}

pub fn hess_survival_at0(eta: f64) -> Result<HessTriple> {
    let (f, tail) = tail_terms(eta)?;
    let t3 = tail * tail * tail;
    Ok(HessTriple {
        d_aa: 4.0 * f / tail * second_moment_bracket(f, tail, eta),
        d_ae: 4.0 * f * f / t3 * (f - eta * tail),
        d_ee: f / t3 * (2.0 * f - eta * tail),
    })
}

/// Multiplier in `∇H = λ∇K` at `α = 0`: `λ = −1/(2ρη F(−η)²)`.
pub fn lagrange_lambda(eta: f64, rho: f64) -> Result<f64> {
    let (_, tail) = tail_terms(eta)?;
    check_rho(rho)?;
    if eta == 0.0 {
        return Err(Error::Singularity("lambda is undefined at eta = 0 (grad K vanishes)".into()));
    }
    Ok(-1.0 / (2.0 * rho * eta * tail * tail))
}

/// Level-curve tangent at `α = 0`, `v = (1/(2f(η)), −1)`.
pub fn level_tangent(eta: f64) -> (f64, f64) {
    (0.5 / pdf(eta), -1.0)
}

/// Second derivative of `H` along the level curve `K = c` through `(0, η)`,
/// assembled as `D²H(v,v) − λ D²K(v,v)`.
pub fn constrained_second_derivative(eta: f64, rho: f64) -> Result<f64> {
    let lambda = lagrange_lambda(eta, rho)?;
    let v = level_tangent(eta);
    Ok(hess_survival_at0(eta)?.quad(v) - lambda * hess_k_at0(eta, rho)?.quad(v))
}

/// The same quantity in simplified form, independent of `ρ`:
/// `−f²/F³ + ηf/F² + 1/F − 1/(4ηfF²) + f/(ηF²)` with `f = f(η)`, `F = F(−η)`.
pub fn constrained_second_derivative_closed(eta: f64) -> Result<f64> {
    let (f, tail) = tail_terms(eta)?;
    if eta == 0.0 {
        return Err(Error::Singularity("the constrained second derivative is undefined at eta = 0".into()));
    }
    let t2 = tail * tail;
    Ok(-f * f / (t2 * tail) + eta * f / t2 + 1.0 / tail - 1.0 / (4.0 * eta * f * t2) + f / (eta * t2))
}

/// Relative gain `R = (K(0,η) − K₀ − E₀)/(K₀ + E₀)` from dropping the smoothing.
pub fn improvement_ratio(alpha: f64, eta: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_eta(eta)?;
    let a = ((1.0 - alpha) / (1.0 + alpha)).sqrt();
    let shrink = (1.0 - alpha * alpha).sqrt() * (1.0 - (cdf(eta / a) - cdf(a * eta)));
    Ok((1.0 - shrink) / shrink)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const F1: f64 = 0.158_655_253_931_457_05; // F(−1)

    fn fd_k_smoothed(alpha: f64, eta: f64, rho: f64) -> f64 {
        k0(alpha, eta, rho).unwrap() + e0(alpha, eta, rho).unwrap()
    }

    #[test]
    fn k_values() {
        assert!((k0(0.0, 0.0, 0.1).unwrap() - 0.079_788_456_080_286_54).abs() < 1e-15);
        assert!((k_axis(0.0, 0.1).unwrap() - 0.079_788_456_080_286_54).abs() < 1e-15);
        assert!(k0(0.99, 1.0, 0.1).unwrap() < 0.2 * 0.15);
        assert_eq!(e0(0.0, 1.3, 0.1).unwrap(), 0.0);
        assert_eq!(e0(0.4, 0.0, 0.1).unwrap(), 0.0);
        let mut prev = f64::INFINITY;
        for i in 0..100 {
            let v = k_axis(i as f64 * 0.05, 0.1).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn grad_k_matches_finite_differences() {
        let (eta, rho, h) = (1.0, 0.1, 1e-4);
        let g = grad_k_at0(eta, rho).unwrap();
        // One-sided second-order difference in α (α < 0 is outside the model).
        let da = (-3.0 * fd_k_smoothed(0.0, eta, rho) + 4.0 * fd_k_smoothed(h, eta, rho)
            - fd_k_smoothed(2.0 * h, eta, rho))
            / (2.0 * h);
        let de = (k_axis(eta + h, rho).unwrap() - k_axis(eta - h, rho).unwrap()) / (2.0 * h);
        assert!((da - g.d_alpha).abs() < 1e-6, "{da} vs {}", g.d_alpha);
        assert!((de - g.d_eta).abs() < 1e-6, "{de} vs {}", g.d_eta);
    }

    #[test]
    fn hess_k_sign_structure() {
        let h = hess_k_at0(1.0, 0.1).unwrap();
        assert!(h.d_ee.abs() < 1e-17);
        assert!(hess_k_at0(0.9, 0.1).unwrap().d_ee < 0.0);
        assert!(hess_k_at0(1.1, 0.1).unwrap().d_ee > 0.0);
        assert!(hess_k_at0(std::f64::consts::FRAC_1_SQRT_2, 0.1).unwrap().d_ae.abs() < 1e-16);
    }

    #[test]
    fn hess_k_cross_and_eta_terms_match_finite_differences() {
        let (rho, h) = (0.1, 1e-4);
        for &eta in &[0.4, 1.0, 1.7] {
            let hs = hess_k_at0(eta, rho).unwrap();
            let dee = (k_axis(eta + h, rho).unwrap() - 2.0 * k_axis(eta, rho).unwrap() + k_axis(eta - h, rho).unwrap())
                / (h * h);
            assert!((dee - hs.d_ee).abs() < 1e-6);
            let da = |e: f64| {
                (-3.0 * fd_k_smoothed(0.0, e, rho) + 4.0 * fd_k_smoothed(h, e, rho) - fd_k_smoothed(2.0 * h, e, rho))
                    / (2.0 * h)
            };
            let dae = (da(eta + h) - da(eta - h)) / (2.0 * h);
            assert!((dae - hs.d_ae).abs() < 1e-5, "eta {eta}: {dae} vs {}", hs.d_ae);
        }
    }

    #[test]
    fn h_values() {
        assert_eq!(h_at0(0.0).unwrap(), 2.0);
        assert!((h_at0(1.0).unwrap() - 1.0 / F1).abs() < 1e-12);
        assert!((h_at0(1.0).unwrap() - 6.3030).abs() < 5e-5);
        let s = pdf(1.0) / sf(1.0);
        let d0 = dh_dalpha_at0(1.0, 0.0).unwrap();
        let d1 = dh_dalpha_at0(1.0, 1.0).unwrap();
        assert!((d1 - d0 - s).abs() < 1e-14);
        assert!(matches!(h_at0(8.5), Err(Error::UnsupportedRegion(_))));
        assert!(matches!(h_at0(-1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn second_moment_integral_at_zero() {
        let f0 = pdf(0.0);
        let expected = 4.0 * f0 * (4.0 * f0 * f0 * f0 + f0);
        assert!((d2h_dalpha2_integral_at0(0.0).unwrap() - expected).abs() < 1e-14);
        for &eta in &[0.0, 0.5, 1.0, 2.0] {
            let ratio = hess_survival_at0(eta).unwrap().d_aa / d2h_dalpha2_integral_at0(eta).unwrap();
            assert!((ratio - 1.0 / sf(eta)).abs() < 1e-12 * ratio);
        }
    }

    #[test]
    fn survival_gradient_values() {
        let g = grad_survival_at0(1.0).unwrap();
        let f = pdf(1.0);
        assert!((g.d_alpha - 2.0 * f * f / (F1 * F1)).abs() < 1e-12);
        assert!((g.d_alpha - 4.6521).abs() < 1e-4);
        assert!((survival_at0(1.0).unwrap() - 6.3030).abs() < 5e-5);
        // ∂H/∂η equals the closed-form η-derivative of 1/F(−η).
        let h = 1e-5;
        let fd = (survival_at0(1.0 + h).unwrap() - survival_at0(1.0 - h).unwrap()) / (2.0 * h);
        assert!((fd - g.d_eta).abs() < 1e-7);
        let fd2 = (survival_at0(1.0 + 1e-4).unwrap() - 2.0 * survival_at0(1.0).unwrap()
            + survival_at0(1.0 - 1e-4).unwrap())
            / 1e-8;
        assert!((fd2 - hess_survival_at0(1.0).unwrap().d_ee).abs() < 1e-4);
    }

    #[test]
    fn lagrange_values() {
        let l = lagrange_lambda(1.0, 0.1).unwrap();
        assert!((l + 1.0 / (0.2 * F1 * F1)).abs() < 1e-9);
        assert!((l + 198.6).abs() < 0.05);
        assert!(matches!(lagrange_lambda(0.0, 0.1), Err(Error::Singularity(_))));
        for &eta in &[0.3, 1.0, 2.0] {
            let l = lagrange_lambda(eta, 0.1).unwrap();
            let gh = grad_survival_at0(eta).unwrap();
            let gk = grad_k_at0(eta, 0.1).unwrap();
            assert!((gh.d_alpha - l * gk.d_alpha).abs() < 1e-10 * gh.d_alpha.max(1.0));
            assert!((gh.d_eta - l * gk.d_eta).abs() < 1e-10 * gh.d_eta.max(1.0));
        }
    }

    #[test]
    fn constrained_second_derivative_values() {
        // Frozen from an independent double-precision evaluation of the assembled form.
        let cases = [(0.05, -19.14), (0.3, -5.465), (1.0, -30.178), (2.0, -4416.0)];
        for &(eta, v) in &cases {
            let a = constrained_second_derivative(eta, 0.1).unwrap();
            assert!((a - v).abs() < 1e-3 * v.abs(), "eta {eta}: {a}");
        }
        let a = constrained_second_derivative(1.0, 0.1).unwrap();
        let b = constrained_second_derivative(1.0, 0.5).unwrap();
        let c = constrained_second_derivative_closed(1.0).unwrap();
        assert!((a - b).abs() < 1e-10);
        assert!((a - c).abs() < 1e-9);
        assert!(matches!(constrained_second_derivative(0.0, 0.1), Err(Error::Singularity(_))));
    }

    #[test]
    fn improvement_values() {
        for &eta in &[0.0, 0.5, 1.0, 3.0] {
            assert_eq!(improvement_ratio(0.0, eta).unwrap(), 0.0);
        }
        let r = improvement_ratio(0.2, 1.0).unwrap();
        assert!((r - 0.130).abs() < 5e-4);
        let ka = k_axis(1.0, 0.1).unwrap();
        let ks = fd_k_smoothed(0.2, 1.0, 0.1);
        assert!((r - (ka - ks) / ks).abs() < 1e-10);
        assert!((improvement_ratio(0.6, 0.0).unwrap() - (1.0 / 0.8 - 1.0)).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn e0_is_non_positive(alpha in 0.0f64..=0.99, eta in 0.0f64..6.0, rho in 0.01f64..0.99) {
            prop_assert!(e0(alpha, eta, rho).unwrap() <= 0.0);
        }

        #[test]
        fn improvement_is_positive(alpha in 1e-3f64..=0.99, eta in 1e-3f64..4.0) {
            prop_assert!(improvement_ratio(alpha, eta).unwrap() > 0.0);
        }

        #[test]
        fn gradients_have_fixed_signs(eta in 0.0f64..8.0, rho in 0.01f64..0.99) {
            let gk = grad_k_at0(eta, rho).unwrap();
            let gh = grad_survival_at0(eta).unwrap();
            prop_assert!(gk.d_alpha <= 0.0 && gk.d_eta <= 0.0);
            prop_assert!(gh.d_alpha > 0.0 && gh.d_eta > 0.0);
        }

        #[test]
        fn lambda_is_negative(eta in 1e-3f64..8.0, rho in 0.01f64..0.99) {
            prop_assert!(lagrange_lambda(eta, rho).unwrap() < 0.0);
        }

        #[test]
        fn assembled_and_closed_agree(eta in 0.05f64..3.0, rho in 0.01f64..0.99) {
            let a = constrained_second_derivative(eta, rho).unwrap();
            let c = constrained_second_derivative_closed(eta).unwrap();
            prop_assert!(a < 0.0);
            prop_assert!((a - c).abs() <= 1e-9 * c.abs().max(1.0));
        }
    }
}
