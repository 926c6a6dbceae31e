//! Closed forms for the balanced two-way and the one-way random effects
//! models.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{digamma, gamma_ratio};

/// One-way model (r = 1, X = 1_N, c groups) under a power prior with a₁ < 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnewayCheck {
    pub c: usize,
    pub n_total: usize,
    pub a_e: f64,
    pub a_1: f64,
    /// 2 exp{Ψ(c/2 + a₁)}
    pub two_exp_psi: f64,
    /// N + 2a_e ≥ c + 2
    pub sample_size_ok: bool,
    /// 1 < 2 exp{Ψ(c/2 + a₁)}
    pub digamma_ok: bool,
    /// Conjunction of the two: the closed-form geometric verdict.
    pub geometric: bool,
    /// c · min{(Σ nᵢ/(nᵢ+1))⁻¹, n*/N}, when group sizes are known
    pub group_size_term: Option<f64>,
    /// Older sufficient condition: N + 2a_e ≥ c + 3 and the group-size term
    /// below 2 exp{Ψ(c/2 + a₁)}.
    pub group_size_condition: Option<bool>,
    /// group-size condition ⇒ closed-form verdict
    pub implication_holds: Option<bool>,
}

pub fn check_oneway(c: usize, n_total: usize, a_e: f64, a_1: f64, group_sizes: Option<&[usize]>) -> Result<OnewayCheck> {
    if c < 2 {
        return Err(Error::Domain(format!("one-way check needs c ≥ 2, got {c}")));
    }
    if !(a_1 < 0.0) {
        return Err(Error::Domain(format!("one-way check needs a₁ < 0, got {a_1}")));
    }
    let x = c as f64 / 2.0 + a_1;
    let two_exp_psi = 2.0 * digamma(x)?.exp();
    let n = n_total as f64;
    let sample_size_ok = n + 2.0 * a_e >= c as f64 + 2.0;
    let digamma_ok = 1.0 < two_exp_psi;
    let geometric = sample_size_ok && digamma_ok;

    let group_size_term = match group_sizes {
        None => None,
        Some(sizes) => {
            if sizes.len() != c || sizes.iter().sum::<usize>() != n_total || sizes.contains(&0) {
                return Err(Error::DimensionMismatch(format!(
                    "group sizes {sizes:?} do not describe c = {c} non-empty groups with N = {n_total}"
                )));
            }
            let harmonic: f64 = sizes.iter().map(|&k| k as f64 / (k as f64 + 1.0)).sum();
            let n_star = *sizes.iter().max().expect("c ≥ 2") as f64;
            Some(c as f64 * (1.0 / harmonic).min(n_star / n))
        }
    };
    let group_size_condition = group_size_term.map(|term| n + 2.0 * a_e >= c as f64 + 3.0 && term < two_exp_psi);
    let implication_holds = group_size_condition.map(|th| !th || geometric);
    Ok(OnewayCheck {
        c,
        n_total,
        a_e,
        a_1,
        two_exp_psi,
        sample_size_ok,
        digamma_ok,
        geometric,
        group_size_term,
        group_size_condition,
        implication_holds,
    })
}

/// Balanced two-way additive model with m × n cells, evaluated at s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwowayCheck {
    pub m: usize,
    pub n: usize,
    /// m + n − 2
    pub t: usize,
    /// both per-block traces equal 1
    pub zeta: [f64; 2],
    pub s_tilde: f64,
    pub s: f64,
    pub lhs_e: f64,
    pub lhs_u: f64,
    pub max_lhs: f64,
    /// closed-form Corollary-1 verdict for zero scales and SSE > 0
    pub corollary1: bool,
}

pub fn check_twoway(m: usize, n: usize, a_e: f64, a_1: f64, a_2: f64, s: f64) -> Result<TwowayCheck> {
    if m < 2 || n < 2 {
        return Err(Error::Domain(format!("two-way check needs m, n ≥ 2, got {m}, {n}")));
    }
    let (mf, nf) = (m as f64, n as f64);
    let cells = mf * nf;
    let s_tilde = (mf + 2.0 * a_1).min(nf + 2.0 * a_2).min(cells + 2.0 * a_e);
    if !(s > 0.0 && s <= 1.0 && s < s_tilde / 2.0) {
        return Err(Error::Domain(format!("s = {s} is outside (0,1] ∩ (0, {})", s_tilde / 2.0)));
    }
    let t = m + n - 2;
    let lhs_e = (mf + nf - 1.0).powf(s) * gamma_ratio(cells / 2.0 + a_e, s)?;
    let lhs_u = gamma_ratio(mf / 2.0 + a_1, s)? + gamma_ratio(nf / 2.0 + a_2, s)?;
    // q − t + 2 = 4 and p + t + 2 = m + n + 1
    let corollary1 = a_1 < 0.0 && a_2 < 0.0 && mf + 2.0 * a_1 > 4.0 && nf + 2.0 * a_2 > 4.0 && cells + 2.0 * a_e > mf + nf + 1.0;
    Ok(TwowayCheck {
        m,
        n,
        t,
        zeta: [1.0, 1.0],
        s_tilde,
        s,
        lhs_e,
        lhs_u,
        max_lhs: lhs_e.max(lhs_u),
        corollary1,
    })
}
