//! Propriety (Theorem 1, Corollary 1) and the two geometric-ergodicity
//! inequalities with their grid search over s.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DesignSummary, PriorSpec};
use crate::special::gamma_ratio;

/// Default number of grid points in the witness search.
pub const DEFAULT_GRID_SIZE: usize = 4096;
/// Lower end of the search interval.
pub const SEARCH_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Verdict {
    pub verdict: bool,
    /// aᵢ < bᵢ = 0 or bᵢ > 0, per block
    pub a: Vec<bool>,
    /// qᵢ + 2aᵢ > q − t, per block
    pub b: Vec<bool>,
    /// N + 2a_e > p − 2 Σ aᵢ 1(aᵢ < 0)
    pub c: bool,
    /// 2b_e + SSE > 0
    pub d: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corollary1Verdict {
    pub verdict: bool,
    pub a: Vec<bool>,
    /// qᵢ + 2aᵢ > q − t + 2, per block
    pub b_prime: Vec<bool>,
    /// N + 2a_e > p + t + 2
    pub c_prime: bool,
    pub d: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Verdict {
    pub verdict: bool,
    /// condition (1): every block has aᵢ < bᵢ = 0 or bᵢ > 0
    pub condition1: bool,
    /// N + 2a_e > p + t
    pub precheck_e: bool,
    /// qᵢ + 2aᵢ > ζᵢ, per block
    pub precheck_u: Vec<bool>,
    pub witness_s: Option<f64>,
    pub lhs_e: Option<f64>,
    pub lhs_u: Option<f64>,
    pub grid_size: usize,
    pub note: Option<String>,
}

fn condition_a(prior: &PriorSpec) -> Vec<bool> {
    prior
        .a
        .iter()
        .zip(&prior.b)
        .map(|(&a, &b)| (b == 0.0 && a < b) || b > 0.0)
        .collect()
}

pub fn check_theorem1(summary: &DesignSummary, prior: &PriorSpec) -> Theorem1Verdict {
    let a = condition_a(prior);
    let slack = (summary.q - summary.t) as f64;
    let b: Vec<bool> = summary
        .q_sizes
        .iter()
        .zip(&prior.a)
        .map(|(&qi, &ai)| qi as f64 + 2.0 * ai > slack)
        .collect();
    let neg: f64 = prior.a.iter().filter(|&&ai| ai < 0.0).sum();
    let c = summary.n as f64 + 2.0 * prior.a_e > summary.p as f64 - 2.0 * neg;
    let d = 2.0 * prior.b_e + summary.sse > 0.0;
    let verdict = a.iter().all(|&v| v) && b.iter().all(|&v| v) && c && d;
    Theorem1Verdict { verdict, a, b, c, d }
}

pub fn check_corollary1(summary: &DesignSummary, prior: &PriorSpec) -> Corollary1Verdict {
    let a = condition_a(prior);
    let slack = (summary.q - summary.t) as f64 + 2.0;
    let b_prime: Vec<bool> = summary
        .q_sizes
        .iter()
        .zip(&prior.a)
        .map(|(&qi, &ai)| qi as f64 + 2.0 * ai > slack)
        .collect();
    let c_prime = summary.n as f64 + 2.0 * prior.a_e > (summary.p + summary.t) as f64 + 2.0;
    let d = 2.0 * prior.b_e + summary.sse > 0.0;
    let verdict = a.iter().all(|&v| v) && b_prime.iter().all(|&v| v) && c_prime && d;
    Corollary1Verdict { verdict, a, b_prime, c_prime, d }
}

fn check_s(s: f64, s_tilde: f64) -> Result<()> {
    if s > 0.0 && s <= 1.0 && s < s_tilde / 2.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("s = {s} is outside (0,1] ∩ (0, {})", s_tilde / 2.0)))
    }
}

/// 2^{−s}(p+t)^s Γ(N/2+a_e−s)/Γ(N/2+a_e).
pub fn lhs_condition_e(s: f64, summary: &DesignSummary, prior: &PriorSpec) -> Result<f64> {
    check_s(s, summary.s_tilde(prior))?;
    let pt = (summary.p + summary.t) as f64;
    Ok(pt.powf(s) * gamma_ratio(summary.n as f64 / 2.0 + prior.a_e, s)?)
}

/// 2^{−s} Σᵢ Γ(qᵢ/2+aᵢ−s)/Γ(qᵢ/2+aᵢ) ζᵢ^s, with 0^s = 0.
pub fn lhs_condition_u(s: f64, summary: &DesignSummary, prior: &PriorSpec) -> Result<f64> {
    check_s(s, summary.s_tilde(prior))?;
    let mut acc = 0.0;
    for ((&qi, &ai), &zeta) in summary.q_sizes.iter().zip(&prior.a).zip(&summary.zeta) {
        if zeta > 0.0 {
            acc += zeta.powf(s) * gamma_ratio(qi as f64 / 2.0 + ai, s)?;
        }
    }
    Ok(acc)
}

/// Search points: a geometric grid over (ε, min(1, s̃/2 − ε)] plus s = 1
/// when admissible.
pub fn search_grid(s_tilde: f64, grid_size: usize) -> Vec<f64> {
    let hi = 1f64.min(s_tilde / 2.0 - SEARCH_EPS);
    let mut grid = Vec::with_capacity(grid_size + 1);
    if hi > SEARCH_EPS && grid_size > 0 {
        if grid_size == 1 {
            grid.push(hi);
        } else {
            let ratio = (hi / SEARCH_EPS).ln() / (grid_size - 1) as f64;
            for k in 0..grid_size {
                let s = if k + 1 == grid_size { hi } else { SEARCH_EPS * (ratio * k as f64).exp() };
                grid.push(s);
            }
        }
    }
    if 1.0 < s_tilde / 2.0 && grid.last() != Some(&1.0) {
        grid.push(1.0);
    }
    grid
}

/// Necessary conditions for a witness: (N + 2a_e > p + t, qᵢ + 2aᵢ > ζᵢ per block).
pub fn necessary_prechecks(summary: &DesignSummary, prior: &PriorSpec) -> (bool, Vec<bool>) {
    let e = summary.n as f64 + 2.0 * prior.a_e > (summary.p + summary.t) as f64;
    let u = summary
        .q_sizes
        .iter()
        .zip(&prior.a)
        .zip(&summary.zeta)
        .map(|((&qi, &ai), &z)| qi as f64 + 2.0 * ai > z)
        .collect();
    (e, u)
}

/// Grid search for s with both left-hand sides below 1. Returns the
/// minimizer of max(lhs_e, lhs_u) when that maximum is below 1.
pub fn search_witness_s(summary: &DesignSummary, prior: &PriorSpec, grid_size: usize) -> Option<f64> {
    theorem2_search(summary, prior, grid_size).witness_s
}

/// Full Theorem-2 evaluation: gate condition, prechecks, grid search.
pub fn theorem2_search(summary: &DesignSummary, prior: &PriorSpec, grid_size: usize) -> Theorem2Verdict {
    let condition1 = condition_a(prior).iter().all(|&v| v);
    let (precheck_e, precheck_u) = necessary_prechecks(summary, prior);
    let mut out = Theorem2Verdict {
        verdict: false,
        condition1,
        precheck_e,
        precheck_u,
        witness_s: None,
        lhs_e: None,
        lhs_u: None,
        grid_size,
        note: None,
    };
    if !condition1 {
        out.note = Some("condition (1) fails: some block has aᵢ ≥ bᵢ = 0".into());
        return out;
    }
    if !(out.precheck_e && out.precheck_u.iter().all(|&v| v)) {
        out.note = Some("necessary prechecks fail; no s can satisfy both inequalities".into());
        return out;
    }
    let s_tilde = summary.s_tilde(prior);
    let grid = search_grid(s_tilde, grid_size);
    if grid.is_empty() {
        out.note = Some("search interval is empty at this resolution".into());
        return out;
    }
    let mut best: Option<(f64, f64, f64)> = None;
    for &s in &grid {
        let (Ok(le), Ok(lu)) = (lhs_condition_e(s, summary, prior), lhs_condition_u(s, summary, prior)) else {
            continue;
        };
        let m = le.max(lu);
        if best.is_none_or(|(_, a, b)| m < a.max(b)) {
            best = Some((s, le, lu));
        }
    }
    match best {
        Some((s, le, lu)) if le < 1.0 && lu < 1.0 => {
            out.verdict = true;
            out.witness_s = Some(s);
            out.lhs_e = Some(le);
            out.lhs_u = Some(lu);
        }
        Some((s, le, lu)) => {
            out.lhs_e = Some(le);
            out.lhs_u = Some(lu);
            out.note = Some(format!("no witness found at this resolution; smallest max LHS {:.6} at s = {s:.6}", le.max(lu)));
        }
        None => out.note = Some("no admissible grid point".into()),
    }
    out
}
