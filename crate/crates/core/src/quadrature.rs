//! Adaptive Simpson quadrature in one and two dimensions.

use crate::error::{Error, Result};

struct Panel {
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
}

const MAX_DEPTH: u32 = 60;
const INITIAL_PANELS: usize = 8;

/// Integrate `f` over `[a, b]` to absolute tolerance `tol`.
///
/// The interval is first cut into a few equal panels so narrow features are
/// not missed by the coarsest rule, then each panel is bisected until the
/// Richardson error estimate `|S₂ − S₁|/15` falls below its share of `tol`.
/// `max_subdivisions` bounds the total number of bisections.
pub fn adaptive_simpson<F>(mut f: F, a: f64, b: f64, tol: f64, max_subdivisions: usize) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Domain(format!("integration limits must be finite, got [{a}, {b}]")));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Parameter(format!("tolerance must be positive, got {tol}")));
    }
    if a == b {
        return Ok(0.0);
    }
    if b < a {
        return adaptive_simpson(f, b, a, tol, max_subdivisions).map(|v| -v);
    }

    let mut stack = Vec::with_capacity(64);
    let width = (b - a) / INITIAL_PANELS as f64;
    let mut fa = f(a);
    for k in 0..INITIAL_PANELS {
        let pa = a + k as f64 * width;
        let pb = if k + 1 == INITIAL_PANELS { b } else { pa + width };
        let fm = f(0.5 * (pa + pb));
        let fb = f(pb);
        stack.push(Panel {
            a: pa,
            b: pb,
            fa,
            fm,
            fb,
            whole: (pb - pa) / 6.0 * (fa + 4.0 * fm + fb),
            tol: tol / INITIAL_PANELS as f64,
            depth: 0,
        });
        fa = fb;
    }

    let mut total = 0.0;
    let mut compensation = 0.0;
    let mut splits = 0usize;
    while let Some(p) = stack.pop() {
        let m = 0.5 * (p.a + p.b);
        let lm = 0.5 * (p.a + m);
        let rm = 0.5 * (m + p.b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - p.a) / 6.0 * (p.fa + 4.0 * flm + p.fm);
        let right = (p.b - m) / 6.0 * (p.fm + 4.0 * frm + p.fb);
        let delta = left + right - p.whole;
        if !delta.is_finite() {
            return Err(Error::Domain(format!("integrand is not finite near x = {m}")));
        }
        if delta.abs() <= 15.0 * p.tol || p.depth >= MAX_DEPTH {
            if p.depth >= MAX_DEPTH && delta.abs() > 15.0 * p.tol {
                return Err(Error::Convergence(format!("adaptive Simpson reached maximum depth near x = {m}")));
            }
            // Kahan summation keeps the many small panel contributions exact enough.
            let term = left + right + delta / 15.0 - compensation;
            let next = total + term;
            compensation = (next - total) - term;
            total = next;
            continue;
        }
        splits += 1;
        if splits > max_subdivisions {
            return Err(Error::Convergence(format!("adaptive Simpson exceeded {max_subdivisions} subdivisions")));
        }
        let tol = 0.5 * p.tol;
        let depth = p.depth + 1;
        stack.push(Panel { a: p.a, b: m, fa: p.fa, fm: flm, fb: p.fm, whole: left, tol, depth });
        stack.push(Panel { a: m, b: p.b, fa: p.fm, fm: frm, fb: p.fb, whole: right, tol, depth });
    }
    Ok(total)
}

/// Iterated integral `∫_a^b ∫_{lo(x)}^{hi(x)} f(x, y) dy dx`.
///
/// Inner limits are clipped to `[y_min, y_max]`; an empty inner range
/// contributes zero. The inner tolerance is tightened so its noise stays
/// well below the outer error estimate.
#[allow(clippy::too_many_arguments)]
pub fn adaptive_simpson_2d<F, L, H>(
    f: F,
    a: f64,
    b: f64,
    lo: L,
    hi: H,
    (y_min, y_max): (f64, f64),
    tol: f64,
    max_subdivisions: usize,
) -> Result<f64>
where
    F: Fn(f64, f64) -> f64,
    L: Fn(f64) -> f64,
    H: Fn(f64) -> f64,
{
    let inner_tol = tol * 1e-2 / (b - a).abs().max(1.0);
    let mut failure = None;
    let outer = adaptive_simpson(
        |x| {
            if failure.is_some() {
                return 0.0;
            }
            let l = lo(x).max(y_min);
            let h = hi(x).min(y_max);
            if h <= l {
                return 0.0;
            }
            match adaptive_simpson(|y| f(x, y), l, h, inner_tol, max_subdivisions) {
                Ok(v) => v,
                Err(e) => {
                    failure = Some(e);
                    0.0
                }
            }
        },
        a,
        b,
        tol,
        max_subdivisions,
    );
    match failure {
        Some(e) => Err(e),
        None => outer,
    }
}

/// Composite Simpson weights for `n` (odd) equally spaced nodes with spacing `h`.
pub fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    assert!(n >= 3 && n % 2 == 1, "Simpson's rule needs an odd node count >= 3");
    let mut w = vec![0.0; n];
    for (i, wi) in w.iter_mut().enumerate() {
        *wi = if i == 0 || i == n - 1 {
            h / 3.0
        } else if i % 2 == 1 {
            4.0 * h / 3.0
        } else {
            2.0 * h / 3.0
        };
    }
    w
}
