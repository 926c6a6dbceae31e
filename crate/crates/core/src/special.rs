//! Log-gamma, gamma ratios and digamma.
//!
//! Everything is evaluated in log space. Small arguments are shifted upward
//! with the recurrence Γ(x+1) = xΓ(x) until the Stirling / asymptotic series
//! converge to double precision; Γ itself is never formed, so there is no
//! overflow for large arguments.

use crate::error::{Error, Result};

/// Below this argument the series are shifted by the recurrence.
const SERIES_MIN: f64 = 15.0;

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// Stirling correction ln Γ(z) − [(z−½)ln z − z + ½ln 2π] for z ≥ 15.
fn stirling_tail(z: f64) -> f64 {
    let w = 1.0 / (z * z);
    // B_{2k} / (2k(2k-1)), k = 1..7
    let series = 1.0 / 12.0
        + w * (-1.0 / 360.0
            + w * (1.0 / 1260.0
                + w * (-1.0 / 1680.0
                    + w * (1.0 / 1188.0 + w * (-691.0 / 360_360.0 + w * (1.0 / 156.0))))));
    series / z
}

/// Natural log of Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut z = x;
    let mut shift = 0.0;
    while z < SERIES_MIN {
        shift += z.ln();
        z += 1.0;
    }
    (z - 0.5) * z.ln() - z + HALF_LN_TWO_PI + stirling_tail(z) - shift
}

/// ln Γ(x−s) − ln Γ(x), accurate even when both terms are large.
pub fn ln_gamma_ratio(x: f64, s: f64) -> f64 {
    debug_assert!(x > 0.0 && x - s > 0.0);
    let mut hi = x;
    let mut lo = x - s;
    let mut acc = 0.0;
    while hi.min(lo) < SERIES_MIN {
        // ln(lo) - ln(hi) = ln1p(-s/hi)
        acc -= (-s / hi).ln_1p();
        hi += 1.0;
        lo += 1.0;
    }
    // (lo-½)ln lo − (hi-½)ln hi + s, with ln lo = ln hi + ln1p(-s/hi)
    let l1 = (-s / hi).ln_1p();
    (lo - 0.5) * l1 - s * hi.ln() + s + stirling_tail(lo) - stirling_tail(hi) + acc
}

/// 2^{−s} Γ(x−s)/Γ(x), the building block of the drift constants.
pub fn gamma_ratio(x: f64, s: f64) -> Result<f64> {
    if !(x.is_finite() && s.is_finite()) || x <= 0.0 || x - s <= 0.0 {
        return Err(Error::Domain(format!(
            "gamma_ratio requires x > 0 and x - s > 0, got x = {x}, s = {s}"
        )));
    }
    if s == 0.0 {
        return Ok(1.0);
    }
    Ok((ln_gamma_ratio(x, s) - s * std::f64::consts::LN_2).exp())
}

/// Digamma Ψ(x) = d/dx ln Γ(x) for x > 0.
pub fn digamma(x: f64) -> Result<f64> {
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::Domain(format!("digamma requires x > 0, got {x}")));
    }
    let mut z = x;
    let mut acc = 0.0;
    while z < 10.0 {
        acc -= 1.0 / z;
        z += 1.0;
    }
    let w = 1.0 / (z * z);
    let tail = w
        * (1.0 / 12.0
            - w * (1.0 / 120.0
                - w * (1.0 / 252.0
                    - w * (1.0 / 240.0
                        - w * (1.0 / 132.0 - w * (691.0 / 32_760.0 - w * (1.0 / 12.0)))))));
    Ok(acc + z.ln() - 0.5 / z - tail)
}
