//! Signal, return and position simulation, plus Monte Carlo estimators of
//! the correlation `K` and the expected survival time `H`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::gaussian::{sample_truncated_above, RngStream, MAX_TRUNCATION};

pub const MAX_ALPHA: f64 = 0.99;
pub const SURVIVAL_CAP: u64 = 100_000_000;
pub const K_BATCHES: usize = 50;

const X_STREAM: u64 = 1;
const EPS_STREAM: u64 = 2;
const INIT_STREAM: u64 = 3;

/// Signal correlation `rho`, smoothing `alpha` and threshold `eta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub rho: f64,
    pub alpha: f64,
    pub eta: f64,
}

impl ModelParams {
    pub fn new(rho: f64, alpha: f64, eta: f64) -> Result<Self> {
        let p = Self { rho, alpha, eta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("rho", self.rho)?;
        ensure_finite("alpha", self.alpha)?;
        ensure_finite("eta", self.eta)?;
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Parameter(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        check_alpha(self.alpha)?;
        if self.eta < 0.0 {
            return Err(Error::Parameter(format!("eta must be >= 0, got {}", self.eta)));
        }
        Ok(())
    }

    /// Innovation scale √(1−α²).
    pub fn innovation_scale(&self) -> f64 {
        (1.0 - self.alpha * self.alpha).sqrt()
    }

    /// Steps discarded before averaging: ceil(50/(1−α)).
    pub fn burn_in(&self) -> usize {
        burn_in(self.alpha)
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=MAX_ALPHA).contains(&alpha) {
        return Err(Error::Parameter(format!("alpha must lie in [0, {MAX_ALPHA}], got {alpha}")));
    }
    Ok(())
}

pub fn burn_in(alpha: f64) -> usize {
    (50.0 / (1.0 - alpha)).ceil() as usize
}

/// Aligned raw signal, smoothed signal, return and position arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalPath {
    pub x: Vec<f64>,
    pub x_smooth: Vec<f64>,
    pub y: Vec<f64>,
    pub w: Vec<i8>,
    pub burn_in: usize,
}

impl SignalPath {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Monte Carlo point estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    /// Number of independent units behind `stderr` (replicates, or batches for batch means).
    pub n: u64,
}

impl McEstimate {
    /// True when `|mean − target| ≤ z·stderr`.
    pub fn agrees_with(&self, target: f64, z: f64) -> bool {
        (self.mean - target).abs() <= z * self.stderr
    }
}

/// EMA smoothing: `x̃_t = α x̃_{t−1} + √(1−α²) x_t`, with `init` playing the role of `x̃_{−1}`.
///
/// Pass an independent N(0,1) draw as `init` for a stationary start.
pub fn smooth_path(x: &[f64], alpha: f64, init: f64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    ensure_finite("init", init)?;
    let s = (1.0 - alpha * alpha).sqrt();
    let mut prev = init;
    Ok(x.iter()
        .map(|&xt| {
            prev = alpha * prev + s * xt;
            prev
        })
        .collect())
}

#[inline]
fn hysteresis_step(xs: f64, eta: f64, prev: i8) -> i8 {
    if xs >= eta {
        1
    } else if xs <= -eta {
        -1
    } else {
        prev
    }
}

/// Initial position for a stationary start: the sign of `x̃₀`, ties toward +1.
#[inline]
pub fn initial_position(x_smooth0: f64) -> i8 {
    if x_smooth0 >= 0.0 {
        1
    } else {
        -1
    }
}

/// Four-case hysteresis rule; `w0` is the position held before the first step.
pub fn apply_hysteresis(x_smooth: &[f64], eta: f64, w0: i8) -> Result<Vec<i8>> {
    if w0 != 1 && w0 != -1 {
        return Err(Error::Parameter(format!("initial position must be +1 or -1, got {w0}")));
    }
    ensure_finite("eta", eta)?;
    let mut prev = w0;
    Ok(x_smooth
        .iter()
        .map(|&xs| {
            prev = hysteresis_step(xs, eta, prev);
            prev
        })
        .collect())
}

/// Build a path from explicit innovations `x`, noise `eps` and pre-sample value `init`.
pub fn path_from_innovations(params: &ModelParams, x: Vec<f64>, eps: &[f64], init: f64) -> Result<SignalPath> {
    params.validate()?;
    if x.len() != eps.len() {
        return Err(Error::Parameter(format!("innovation lengths differ: {} vs {}", x.len(), eps.len())));
    }
    let x_smooth = smooth_path(&x, params.alpha, init)?;
    let w = match x_smooth.first() {
        Some(&x0) => apply_hysteresis(&x_smooth, params.eta, initial_position(x0))?,
        None => Vec::new(),
    };
    let noise = (1.0 - params.rho * params.rho).sqrt();
    let y = x.iter().zip(eps).map(|(&xt, &e)| params.rho * xt + noise * e).collect();
    Ok(SignalPath { x, x_smooth, y, w, burn_in: params.burn_in() })
}

/// The three independent streams a path is drawn from.
pub(crate) struct PathStreams {
    pub x: RngStream,
    pub eps: RngStream,
    pub init: f64,
}

impl PathStreams {
    pub fn new(seed: &RngStream) -> Self {
        let mut init = seed.derive(INIT_STREAM);
        Self { x: seed.derive(X_STREAM), eps: seed.derive(EPS_STREAM), init: init.std_normal() }
    }
}

/// Simulate `steps` periods of the model.
pub fn gen_path(params: &ModelParams, steps: usize, seed: &RngStream) -> Result<SignalPath> {
    params.validate()?;
    if steps < 2 {
        return Err(Error::Parameter(format!("path length must be >= 2, got {steps}")));
    }
    let mut st = PathStreams::new(seed);
    let x: Vec<f64> = (0..steps).map(|_| st.x.std_normal()).collect();
    let eps: Vec<f64> = (0..steps).map(|_| st.eps.std_normal()).collect();
    path_from_innovations(params, x, &eps, st.init)
}

/// Batch-means summary of a serially dependent series, skipping `skip` leading values.
///
/// Uses `K_BATCHES` equal batches; a remainder shorter than one batch is dropped.
pub fn batch_means<I>(values: I, len: usize) -> McEstimate
where
    I: IntoIterator<Item = f64>,
{
    let batch = len / K_BATCHES;
    let mut sums = [0.0f64; K_BATCHES];
    for (i, v) in values.into_iter().take(batch * K_BATCHES).enumerate() {
        sums[i / batch] += v;
    }
    let means: Vec<f64> = sums.iter().map(|s| s / batch as f64).collect();
    let mean = means.iter().sum::<f64>() / K_BATCHES as f64;
    let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (K_BATCHES - 1) as f64;
    McEstimate { mean, stderr: (var / K_BATCHES as f64).sqrt(), n: K_BATCHES as u64 }
}

fn check_k_length(params: &ModelParams, steps: usize) -> Result<usize> {
    let b = params.burn_in();
    if steps < 10 * b {
        return Err(Error::Parameter(format!(
            "K estimation needs at least {} steps (10 x burn-in) at alpha = {}, got {steps}",
            10 * b,
            params.alpha
        )));
    }
    Ok(b)
}

/// Time average of `w_t y_t` after burn-in, with a batch-means standard error.
///
/// Streams the path without storing it; the draws are the same as [`gen_path`]
/// with the same seed.
pub fn estimate_k_mc(params: &ModelParams, steps: usize, seed: &RngStream) -> Result<McEstimate> {
    params.validate()?;
    let b = check_k_length(params, steps)?;
    let mut st = PathStreams::new(seed);
    let (a, s) = (params.alpha, params.innovation_scale());
    let (rho, noise) = (params.rho, (1.0 - params.rho * params.rho).sqrt());
    let mut xs = st.init;
    let mut w = 0i8;
    let products = (0..steps).filter_map(move |t| {
        let x = st.x.std_normal();
        let y = rho * x + noise * st.eps.std_normal();
        xs = a * xs + s * x;
        w = if t == 0 {
            hysteresis_step(xs, params.eta, initial_position(xs))
        } else {
            hysteresis_step(xs, params.eta, w)
        };
        (t >= b).then(|| f64::from(w) * y)
    });
    Ok(batch_means(products, steps - b))
}

/// Correlation estimate from a stored smoothed signal and return series.
///
/// Lets callers reuse one path across many thresholds (common random numbers).
pub fn k_from_series(x_smooth: &[f64], y: &[f64], eta: f64, burn_in: usize) -> Result<McEstimate> {
    if x_smooth.len() != y.len() {
        return Err(Error::Parameter("series lengths differ".into()));
    }
    if x_smooth.len() < 10 * burn_in || x_smooth.is_empty() {
        return Err(Error::Parameter(format!(
            "series of length {} is shorter than 10 x burn-in ({burn_in})",
            x_smooth.len()
        )));
    }
    let mut w = initial_position(x_smooth[0]);
    let products = x_smooth.iter().zip(y).enumerate().filter_map(|(t, (&xs, &yt))| {
        w = hysteresis_step(xs, eta, w);
        (t >= burn_in).then(|| f64::from(w) * yt)
    });
    Ok(batch_means(products, x_smooth.len() - burn_in))
}

/// One survival time: start `x̃₀ ~ N(0,1) | x̃₀ > η`, return the first `t ≥ 1` with `x̃_t ≤ −η`.
pub fn sample_survival_time(params: &ModelParams, rng: &mut RngStream) -> Result<u64> {
    survival_time_capped(params, rng, SURVIVAL_CAP)
}

pub(crate) fn survival_time_capped(params: &ModelParams, rng: &mut RngStream, cap: u64) -> Result<u64> {
    if params.eta > MAX_TRUNCATION {
        return Err(Error::UnsupportedRegion(format!(
            "eta = {} exceeds {MAX_TRUNCATION}; start distribution underflows",
            params.eta
        )));
    }
    let (a, s, eta) = (params.alpha, params.innovation_scale(), params.eta);
    let mut xs = sample_truncated_above(eta, rng)?;
    for t in 1..=cap {
        xs = a * xs + s * rng.std_normal();
        if xs <= -eta {
            return Ok(t);
        }
    }
    Err(Error::NonTermination { cap })
}

/// Mean survival time over `n` replicates, replicate `i` drawn from `seed.derive(i)`.
///
/// Sums are accumulated as exact integers, so the result does not depend on
/// how rayon splits the work.
pub fn estimate_h_mc(params: &ModelParams, n: u64, seed: &RngStream) -> Result<McEstimate> {
    estimate_h_mc_capped(params, n, seed, SURVIVAL_CAP)
}

pub(crate) fn estimate_h_mc_capped(params: &ModelParams, n: u64, seed: &RngStream, cap: u64) -> Result<McEstimate> {
    params.validate()?;
    if n < 2 {
        return Err(Error::Parameter(format!("need at least 2 replicates, got {n}")));
    }
    type Acc = std::result::Result<(u64, u128), (u64, Error)>;
    let merge = |a: Acc, b: Acc| -> Acc {
        match (a, b) {
            (Ok((s1, q1)), Ok((s2, q2))) => Ok((s1 + s2, q1 + q2)),
            (Err(e), Ok(_)) | (Ok(_), Err(e)) => Err(e),
            (Err(e1), Err(e2)) => Err(if e1.0 <= e2.0 { e1 } else { e2 }),
        }
    };
    let acc = (0..n)
        .into_par_iter()
        .map(|i| -> Acc {
            let mut rng = seed.derive(i);
            let t = survival_time_capped(params, &mut rng, cap).map_err(|e| (i, e))?;
            Ok((t, u128::from(t) * u128::from(t)))
        })
        .reduce(|| Ok((0, 0)), merge);
    let (sum, sum_sq) = acc.map_err(|(_, e)| e)?;
    let nf = n as f64;
    let mean = sum as f64 / nf;
    // n·Σt² − (Σt)² is exact in u128 for any realistic sample.
    let centered = (u128::from(n) * sum_sq - u128::from(sum) * u128::from(sum)) as f64;
    let var = centered / (nf * (nf - 1.0));
    Ok(McEstimate { mean, stderr: (var / nf).sqrt(), n })
}

/// Fraction of post-burn-in steps at which the position changes.
pub fn trade_frequency(path: &SignalPath) -> Result<f64> {
    let n = path.w.len();
    if n < path.burn_in + 2 {
        return Err(Error::Parameter(format!("path of length {n} is too short for burn-in {}", path.burn_in)));
    }
    let flips = path.w[path.burn_in..].windows(2).filter(|p| p[0] != p[1]).count();
    Ok(flips as f64 / (n - path.burn_in - 1) as f64)
}
