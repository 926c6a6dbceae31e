//! Explicit drift constants for the σ²-chain:
//! E(v(σ²) | σ̃²) ≤ ρ v(σ̃²) + L with
//! v = α(σ²_e)^s + Σ(σ²_{uᵢ})^s + α(σ²_e)^{−c} + Σ(σ²_{uᵢ})^{−c}.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Variances;
use crate::linalg::cholesky_with_jitter;
use crate::model::{DesignSummary, GlmmDesign, PriorSpec};
use crate::special::{gamma_ratio, ln_gamma_ratio};

/// A number that comes from numerical search rather than a closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub estimated: bool,
}

impl Estimate {
    pub fn estimated(value: f64) -> Self {
        Estimate { value, estimated: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DriftCase {
    /// some bᵢ = 0
    ZeroScaleBlocks,
    /// every bᵢ > 0
    AllScalesPositive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftCertificate {
    pub s: f64,
    pub c: f64,
    pub alpha: f64,
    pub rho: f64,
    #[serde(rename = "L")]
    pub l: Estimate,
    /// δ₁(s), δ₂(s), δ₃(s), δ₄(c), δ₅(c); δ₄ = δ₅ = 0 when every bᵢ > 0
    pub delta: [f64; 5],
    pub kappa: f64,
    #[serde(rename = "K_estimate")]
    pub k_estimate: Estimate,
    pub case: DriftCase,
}

impl DriftCertificate {
    /// ρ recomputed from the stored constants.
    pub fn rho_from_parts(&self) -> f64 {
        rho_formula(&self.delta, self.alpha, self.case)
    }

    /// The drift function at σ².
    pub fn drift_function(&self, sigma2: &Variances) -> f64 {
        drift_value(sigma2, self.alpha, self.s, self.c)
    }
}

fn rho_formula(d: &[f64; 5], alpha: f64, case: DriftCase) -> f64 {
    let base = (d[0] + d[1] / alpha).max(d[2]);
    match case {
        DriftCase::ZeroScaleBlocks => base.max(d[3] / alpha).max(d[4]),
        DriftCase::AllScalesPositive => base,
    }
}

/// v(σ²) = α(σ²_e)^s + Σ(σ²_{uᵢ})^s + α(σ²_e)^{−c} + Σ(σ²_{uᵢ})^{−c}.
pub fn drift_value(sigma2: &Variances, alpha: f64, s: f64, c: f64) -> f64 {
    let e = sigma2.e;
    let mut v = alpha * (e.powf(s) + e.powf(-c));
    for &u in &sigma2.u {
        v += u.powf(s) + u.powf(-c);
    }
    v
}

/// Default c: min(1/4, ã/2) with ã = −max_{i∈A} aᵢ, and 1/4 when A = ∅.
pub fn default_c(prior: &PriorSpec) -> f64 {
    let zero = prior.zero_scale_blocks();
    if zero.is_empty() {
        return 0.25;
    }
    let a_tilde = -zero.iter().map(|&i| prior.a[i]).fold(f64::NEG_INFINITY, f64::max);
    0.25f64.min(a_tilde / 2.0)
}

pub fn drift_certificate(
    summary: &DesignSummary,
    prior: &PriorSpec,
    s: f64,
    c: Option<f64>,
    k_estimate: f64,
) -> Result<DriftCertificate> {
    prior.check_for(summary.r)?;
    let s_tilde = summary.s_tilde(prior);
    if !(s > 0.0 && s <= 1.0 && s < s_tilde / 2.0) {
        return Err(Error::Domain(format!("s = {s} is outside (0,1] ∩ (0, {})", s_tilde / 2.0)));
    }
    if !(k_estimate >= 0.0 && k_estimate.is_finite()) {
        return Err(Error::InvalidArgument(format!("K estimate must be finite and ≥ 0, got {k_estimate}")));
    }
    let zero = prior.zero_scale_blocks();
    let case = if zero.is_empty() { DriftCase::AllScalesPositive } else { DriftCase::ZeroScaleBlocks };
    let c = match (c, case) {
        (None, _) => default_c(prior),
        (Some(c), DriftCase::AllScalesPositive) if c > 0.0 && c.is_finite() => c,
        (Some(c), DriftCase::ZeroScaleBlocks) => {
            let a_tilde = -zero.iter().map(|&i| prior.a[i]).fold(f64::NEG_INFINITY, f64::max);
            if !(c > 0.0 && c < 0.5 && c < a_tilde) {
                return Err(Error::Domain(format!("c = {c} is outside (0, 1/2) ∩ (0, {a_tilde})")));
            }
            c
        }
        (Some(c), _) => return Err(Error::Domain(format!("c must be positive, got {c}"))),
    };
    if !(c > 0.0) {
        return Err(Error::Domain(format!("no admissible c: zero-scale blocks need aᵢ < 0 (c = {c})")));
    }

    let n_half = summary.n as f64 / 2.0 + prior.a_e;
    let g0_s = gamma_ratio(n_half, s)?;
    let g0_c = gamma_ratio(n_half, -c)?;
    let mut gi_s = Vec::with_capacity(summary.r);
    let mut gi_c = Vec::with_capacity(summary.r);
    for (&qi, &ai) in summary.q_sizes.iter().zip(&prior.a) {
        gi_s.push(gamma_ratio(qi as f64 / 2.0 + ai, s)?);
        gi_c.push(gamma_ratio(qi as f64 / 2.0 + ai, -c)?);
    }

    let d1 = g0_s * ((summary.p + summary.t) as f64).powf(s);
    let pow0 = |x: f64, e: f64| if x > 0.0 { x.powf(e) } else { 0.0 };
    let d2: f64 = summary.xi.iter().zip(&gi_s).map(|(&x, &g)| pow0(x, s) * g).sum();
    let d3: f64 = summary.zeta.iter().zip(&gi_s).map(|(&z, &g)| pow0(z, s) * g).sum();
    // Gᵢ(−c) · Γ(qᵢ/2 − c)/Γ(qᵢ/2), without the 2^{−c}
    let inv_moment = |i: usize| gi_c[i] * ln_gamma_ratio(summary.q_sizes[i] as f64 / 2.0, c).exp();
    let two_c = 2f64.powf(-c);
    let (d4, d5) = match case {
        DriftCase::AllScalesPositive => (0.0, 0.0),
        DriftCase::ZeroScaleBlocks => {
            let sum: f64 = zero.iter().map(|&i| inv_moment(i)).sum();
            let max = zero.iter().map(|&i| inv_moment(i)).fold(0.0, f64::max);
            (two_c * pow0(summary.lambda_max, c) * sum, two_c * max)
        }
    };
    if d1 >= 1.0 {
        return Err(Error::CertificateUnavailable(format!("δ₁(s) = {d1} ≥ 1")));
    }
    if d3 >= 1.0 {
        return Err(Error::CertificateUnavailable(format!("δ₃(s) = {d3} ≥ 1")));
    }
    if case == DriftCase::ZeroScaleBlocks && d5 >= 1.0 {
        return Err(Error::CertificateUnavailable(format!("δ₅(c) = {d5} ≥ 1")));
    }

    let threshold = (d2 / (1.0 - d1)).max(d4);
    let alpha = if threshold > 0.0 { 2.0 * threshold } else { 1.0 };
    let delta = [d1, d2, d3, d4, d5];
    let rho = rho_formula(&delta, alpha, case);

    let two_s = 2f64.powf(s);
    let mut kappa = alpha * two_s * g0_s * pow0(prior.b_e, s);
    kappa += two_s * gi_s.iter().zip(&prior.b).map(|(&g, &b)| g * pow0(b, s)).sum::<f64>();
    kappa += alpha * two_c * g0_c * (prior.b_e + summary.sse / 2.0).powf(-c);
    kappa += gi_c.iter().zip(&prior.b).filter(|(_, &b)| b > 0.0).map(|(&g, &b)| g * (2.0 * b).powf(-c)).sum::<f64>();

    let k = k_estimate;
    let mut l = kappa + alpha * g0_s * pow0(summary.norm_izx_y + summary.fro_izx_z * k, 2.0 * s);
    for (&qi, &g) in summary.q_sizes.iter().zip(&gi_s) {
        l += g * pow0((qi as f64).sqrt() * k, 2.0 * s);
    }

    Ok(DriftCertificate {
        s,
        c,
        alpha,
        rho,
        l: Estimate::estimated(l),
        delta,
        kappa,
        k_estimate: Estimate::estimated(k),
        case,
    })
}

/// σ²_e Q = Zᵀ(I−P_X)Z + σ²_e D⁻¹.
fn scaled_precision(summary: &DesignSummary, sigma2: &Variances) -> DMatrix<f64> {
    let mut a = summary.ztz_resid.clone();
    for (i, &s) in sigma2.u.iter().enumerate() {
        for j in summary.offsets[i]..summary.offsets[i + 1] {
            a[(j, j)] += sigma2.e / s;
        }
    }
    a
}

/// h(σ²) = ‖(σ²_e)⁻¹ Q⁻¹ Zᵀ(I−P_X)y‖.
pub fn h_norm(summary: &DesignSummary, sigma2: &Variances) -> Result<f64> {
    sigma2.check()?;
    if sigma2.u.len() != summary.r {
        return Err(Error::DimensionMismatch(format!("{} variances for r = {}", sigma2.u.len(), summary.r)));
    }
    if summary.ztilde_y.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let a = scaled_precision(summary, sigma2);
    let chol = cholesky_with_jitter(&a).ok_or_else(|| Error::SingularQ(format!("σ² = {:?}", sigma2.to_vec())))?;
    Ok(chol.solve(&summary.ztilde_y).norm())
}

/// Per-observation terms Kᵢ(σ²) = ‖(Zᵀ(I−P_X)Z + σ²_e D⁻¹)⁻¹ z̃ᵢ‖, with z̃ᵢ
/// the i-th row of (I−P_X)Z.
pub fn k_terms(summary: &DesignSummary, sigma2: &Variances) -> Result<DVector<f64>> {
    sigma2.check()?;
    let a = scaled_precision(summary, sigma2);
    let chol = cholesky_with_jitter(&a).ok_or_else(|| Error::SingularQ(format!("σ² = {:?}", sigma2.to_vec())))?;
    let sol = chol.solve(&summary.z_resid.transpose());
    Ok(DVector::from_iterator(sol.ncols(), sol.column_iter().map(|c| c.norm())))
}

const K_SEED: u64 = 0x4b5f_6573_7469_6d61;
const LOG10_LO: f64 = -8.0;
const LOG10_HI: f64 = 8.0;

/// Deterministic exploration set: coordinate extremes first, then `budget`
/// log-uniform points from a fixed seed, so a larger budget explores a
/// superset.
pub fn k_search_points(r: usize, budget: usize) -> Vec<Variances> {
    let (lo, hi) = (10f64.powf(LOG10_LO), 10f64.powf(LOG10_HI));
    let mut pts = vec![Variances::ones(r)];
    pts.push(Variances { e: lo, u: vec![lo; r] });
    pts.push(Variances { e: hi, u: vec![hi; r] });
    for k in 0..=r {
        for &v in &[lo, hi] {
            let mut p = Variances::ones(r);
            if k == 0 {
                p.e = v;
            } else {
                p.u[k - 1] = v;
            }
            pts.push(p);
            // one coordinate at an extreme, all others at the opposite one
            let other = if v == lo { hi } else { lo };
            let mut q = Variances { e: other, u: vec![other; r] };
            if k == 0 {
                q.e = v;
            } else {
                q.u[k - 1] = v;
            }
            pts.push(q);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(K_SEED);
    let mut draw = || 10f64.powf(rng.random_range(LOG10_LO..=LOG10_HI));
    for _ in 0..budget {
        let e = draw();
        let u = (0..r).map(|_| draw()).collect();
        pts.push(Variances { e, u });
    }
    pts
}

/// Numerically estimated lower bound for K: the larger of max h(σ²) and
/// Σ|yᵢ| max Kᵢ(σ²) over the exploration set.
pub fn estimate_k(summary: &DesignSummary, design: &GlmmDesign, budget: usize) -> Result<Estimate> {
    if budget < 1 {
        return Err(Error::InvalidArgument("budget must be ≥ 1".into()));
    }
    let y = design.y();
    if y.len() != summary.n {
        return Err(Error::DimensionMismatch("design and summary disagree on N".into()));
    }
    if y.iter().all(|&v| v == 0.0) {
        return Ok(Estimate::estimated(0.0));
    }
    let mut h_max: f64 = 0.0;
    let mut per_term = vec![0.0f64; summary.n];
    for sigma2 in k_search_points(summary.r, budget) {
        let Ok(terms) = k_terms(summary, &sigma2) else {
            continue;
        };
        if let Ok(h) = h_norm(summary, &sigma2) {
            h_max = h_max.max(h);
        }
        for (slot, &t) in per_term.iter_mut().zip(terms.iter()) {
            *slot = slot.max(t);
        }
    }
    let weighted: f64 = y.iter().zip(&per_term).map(|(yi, k)| yi.abs() * k).sum();
    Ok(Estimate::estimated(h_max.max(weighted)))
}
