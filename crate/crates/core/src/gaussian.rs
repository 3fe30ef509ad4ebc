//! Standard-normal primitives and deterministic random streams.
//!
//! The unchecked functions [`pdf`], [`cdf`] and [`sf`] are the hot-path
//! versions used by the rest of the crate; the `gauss_*` functions validate
//! their input and return [`Result`].

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure_finite, Error, Result};

/// 1/√(2π)
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Largest lower bound accepted by the truncated sampler.
pub const MAX_TRUNCATION: f64 = 8.0;

#[inline]
pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Lower tail P(Z ≤ x), through erfc so the left tail keeps full relative precision.
#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Upper tail P(Z > x) = cdf(-x).
#[inline]
pub fn sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * std::f64::consts::FRAC_1_SQRT_2)
}

pub fn gauss_pdf(x: f64) -> Result<f64> {
    ensure_finite("x", x)?;
    Ok(pdf(x))
}

pub fn gauss_cdf(x: f64) -> Result<f64> {
    ensure_finite("x", x)?;
    Ok(cdf(x))
}

/// Quantile of the standard normal.
///
/// Acklam's rational approximation followed by one Halley step against the
/// erfc-based [`cdf`], which brings the result to near machine precision.
pub fn gauss_inv_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("probability must lie in (0, 1), got {p}")));
    }
    Ok(inv_cdf(p))
}

pub(crate) fn inv_cdf(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] =
        [7.784_695_709_041_462e-3, 3.224_671_290_700_398e-1, 2.445_134_137_142_996, 3.754_408_661_907_416];
    const P_LOW: f64 = 0.024_25;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    // Halley refinement; measure the error in whichever tail is small.
    let e = if x <= 0.0 { cdf(x) - p } else { (1.0 - p) - sf(x) };
    let u = e * std::f64::consts::TAU.sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Partial moments of the standard normal above a lower bound `u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedMoments {
    pub lower_bound: f64,
    /// ∫_u^∞ x f(x) dx = f(u)
    pub mean_part: f64,
    /// ∫_u^∞ (x² − 1) f(x) dx = u f(u)
    pub x2m1_part: f64,
    /// ∫_u^∞ x² f(x) dx = u f(u) + 1 − F(u)
    pub x2_part: f64,
}

pub fn trunc_moments(u: f64) -> Result<TruncatedMoments> {
    ensure_finite("u", u)?;
    let fu = pdf(u);
    Ok(TruncatedMoments { lower_bound: u, mean_part: fu, x2m1_part: u * fu, x2_part: u * fu + sf(u) })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A reproducible random stream identified by `(master_seed, stream_id)`.
///
/// Backed by ChaCha8 keyed from the master seed, with the ChaCha stream
/// selector set to `stream_id`. The n-th draw is a pure function of the
/// pair and n. Child streams come from [`RngStream::derive`], which only
/// looks at the identifiers, never at how much of the parent was consumed.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        Self { master_seed, stream_id, rng }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Child stream for `tag`, independent of the parent's position.
    pub fn derive(&self, tag: u64) -> RngStream {
        let id = splitmix64(self.stream_id ^ splitmix64(tag.wrapping_add(0xA076_1D64_78BD_642F)));
        RngStream::new(self.master_seed, id)
    }

    /// Uniform on the open interval (0, 1); consumes one 64-bit word.
    #[inline]
    pub fn open01(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn std_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

pub fn sample_std_normal(rng: &mut RngStream) -> f64 {
    rng.std_normal()
}

/// Draw from N(0,1) conditioned on exceeding `u`, by inverting the upper tail.
///
/// Exactly one uniform is consumed per call.
pub fn sample_truncated_above(u: f64, rng: &mut RngStream) -> Result<f64> {
    ensure_finite("u", u)?;
    if u > MAX_TRUNCATION {
        return Err(Error::UnsupportedRegion(format!(
            "truncation point {u} exceeds {MAX_TRUNCATION}; upper tail mass underflows"
        )));
    }
    let tail = sf(u);
    let x = -inv_cdf(rng.open01() * tail);
    // Rounding in the last ulp can land exactly on the bound.
    Ok(if x > u { x } else { u.next_up() })
}
