//! The two full conditionals and the one-step Gibbs transition.
//!
//! One step draws θ = (β, u) from its multivariate normal conditional given
//! the current variances, then draws the r + 1 variances from independent
//! inverted-gamma conditionals given θ.

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::cholesky_with_jitter;
use crate::model::{DesignSummary, GlmmDesign, PriorSpec};
use crate::special::ln_gamma;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Variance components (σ²_e, σ²_{u₁}, …, σ²_{u_r}).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variances {
    pub e: f64,
    pub u: Vec<f64>,
}

impl Variances {
    pub fn new(e: f64, u: Vec<f64>) -> Result<Self> {
        let v = Variances { e, u };
        v.check()?;
        Ok(v)
    }

    pub fn ones(r: usize) -> Self {
        Variances { e: 1.0, u: vec![1.0; r] }
    }

    pub fn check(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.e) && self.u.iter().all(|&v| ok(v)) {
            Ok(())
        } else {
            Err(Error::NonFinite(format!(
                "variances must be finite and positive: e = {}, u = {:?}",
                self.e, self.u
            )))
        }
    }

    /// (σ²_e, σ²_{u₁}, …) as a flat vector.
    pub fn to_vec(&self) -> Vec<f64> {
        std::iter::once(self.e).chain(self.u.iter().copied()).collect()
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match v.split_first() {
            Some((&e, rest)) => Variances::new(e, rest.to_vec()),
            None => Err(Error::DimensionMismatch("empty variance vector".into())),
        }
    }
}

/// Regression coefficients and random effects.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub beta: DVector<f64>,
    pub u: DVector<f64>,
}

/// A full Gibbs state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamState {
    pub beta: DVector<f64>,
    pub u: DVector<f64>,
    pub sigma2: Variances,
}

impl ParamState {
    /// β at the least-squares fit, every uᵢ entry 1 (never in the null set),
    /// all variances 1.
    pub fn initial(summary: &DesignSummary) -> Self {
        ParamState {
            beta: summary.beta_ls.clone(),
            u: DVector::from_element(summary.q, 1.0),
            sigma2: Variances::ones(summary.r),
        }
    }

    pub fn check(&self, summary: &DesignSummary) -> Result<()> {
        if self.beta.len() != summary.p || self.u.len() != summary.q || self.sigma2.u.len() != summary.r {
            return Err(Error::DimensionMismatch(format!(
                "state has |β| = {}, |u| = {}, r = {}; design has p = {}, q = {}, r = {}",
                self.beta.len(),
                self.u.len(),
                self.sigma2.u.len(),
                summary.p,
                summary.q,
                summary.r
            )));
        }
        if !self.beta.iter().chain(self.u.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("θ".into()));
        }
        self.sigma2.check()
    }

    /// (β, u, σ²_e, σ²_u) flattened in that order.
    pub fn to_row(&self) -> Vec<f64> {
        self.beta.iter().chain(self.u.iter()).copied().chain(self.sigma2.to_vec()).collect()
    }
}

/// Seedable ChaCha8 stream. Sub-streams are derived deterministically from
/// the parent seed and an index.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// An independent stream keyed by `(seed, index)`; does not advance `self`.
    pub fn substream(&self, index: u64) -> Self {
        RngStream::new(splitmix64(self.seed ^ splitmix64(index.wrapping_add(1))))
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Q = (σ²_e)⁻¹ Zᵀ(I − P_X)Z + D⁻¹.
pub fn precision_q(summary: &DesignSummary, sigma2: &Variances) -> DMatrix<f64> {
    let mut q = &summary.ztz_resid / sigma2.e;
    for (i, &s) in sigma2.u.iter().enumerate() {
        for j in summary.offsets[i]..summary.offsets[i + 1] {
            q[(j, j)] += 1.0 / s;
        }
    }
    q
}

fn check_sigma2(summary: &DesignSummary, sigma2: &Variances) -> Result<()> {
    if sigma2.u.len() != summary.r {
        return Err(Error::DimensionMismatch(format!(
            "{} random-effect variances for r = {}",
            sigma2.u.len(),
            summary.r
        )));
    }
    sigma2.check()
}

/// Mean m and covariance V of π(θ | σ², y), evaluated from the block formulas
/// with R = (XᵀX)⁻¹XᵀZ.
pub fn theta_conditional_moments(
    summary: &DesignSummary,
    design: &GlmmDesign,
    sigma2: &Variances,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_sigma2(summary, sigma2)?;
    let (p, q) = (summary.p, summary.q);
    let q_mat = precision_q(summary, sigma2);
    let q_inv = cholesky_with_jitter(&q_mat)
        .ok_or_else(|| Error::SingularQ(format!("σ² = {:?}", sigma2.to_vec())))?
        .inverse();

    let z = design.z();
    let x = design.x();
    let y = design.y();
    // u-mean (σ²_e)⁻¹ Q⁻¹ Zᵀ(I−P_X)y
    let mean_u = &q_inv * &summary.ztilde_y / sigma2.e;
    // β-mean (XᵀX)⁻¹Xᵀ(I − (σ²_e)⁻¹ Z Q⁻¹ Zᵀ(I−P_X)) y
    let adjusted = y - &z * &mean_u;
    let mean_beta = &summary.xtx_inv * (x.transpose() * adjusted);

    let r = &summary.r_mat;
    let r_qinv = r * &q_inv;
    let mut cov = DMatrix::zeros(p + q, p + q);
    cov.view_mut((0, 0), (p, p))
        .copy_from(&(&summary.xtx_inv * sigma2.e + &r_qinv * r.transpose()));
    cov.view_mut((0, p), (p, q)).copy_from(&(-&r_qinv));
    cov.view_mut((p, 0), (q, p)).copy_from(&(-r_qinv.transpose()));
    cov.view_mut((p, p), (q, q)).copy_from(&q_inv);

    let mut mean = DVector::zeros(p + q);
    mean.rows_mut(0, p).copy_from(&mean_beta);
    mean.rows_mut(p, q).copy_from(&mean_u);
    Ok((mean, cov))
}

/// π(θ | σ², y) prepared for repeated draws: u ~ N(μ_u, Q⁻¹) through the
/// Cholesky factor of Q, then β | u ~ N((XᵀX)⁻¹Xᵀ(y − Zu), σ²_e(XᵀX)⁻¹).
#[derive(Debug, Clone)]
pub struct ThetaSampler {
    chol_l: DMatrix<f64>,
    mean_u: DVector<f64>,
    sd_e: f64,
}

impl ThetaSampler {
    pub fn new(summary: &DesignSummary, sigma2: &Variances) -> Result<Self> {
        check_sigma2(summary, sigma2)?;
        let q_mat = precision_q(summary, sigma2);
        let chol = cholesky_with_jitter(&q_mat)
            .ok_or_else(|| Error::SingularQ(format!("σ² = {:?}", sigma2.to_vec())))?;
        let mean_u = chol.solve(&summary.ztilde_y) / sigma2.e;
        Ok(ThetaSampler { chol_l: chol.unpack(), mean_u, sd_e: sigma2.e.sqrt() })
    }

    pub fn mean_u(&self) -> &DVector<f64> {
        &self.mean_u
    }

    pub fn sample<R: RngCore + ?Sized>(&self, summary: &DesignSummary, rng: &mut R) -> Theta {
        let q = summary.q;
        let p = summary.p;
        let z = DVector::from_fn(q, |_, _| StandardNormal.sample(&mut *rng));
        let noise_u = self
            .chol_l
            .transpose()
            .solve_upper_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        let u = &self.mean_u + noise_u;
        let z2 = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut *rng));
        let beta = &summary.beta_ls - &summary.r_mat * &u + &summary.xtx_inv_factor * z2 * self.sd_e;
        Theta { beta, u }
    }

    /// Mean and covariance implied by the two-stage construction.
    pub fn implied_moments(&self, summary: &DesignSummary) -> (DVector<f64>, DMatrix<f64>) {
        let (p, q) = (summary.p, summary.q);
        let l_inv = self
            .chol_l
            .solve_lower_triangular(&DMatrix::identity(q, q))
            .expect("Cholesky factor has a positive diagonal");
        let cov_u = l_inv.transpose() * &l_inv;
        let r = &summary.r_mat;
        let f = &summary.xtx_inv_factor;
        let cov_beta = f * f.transpose() * (self.sd_e * self.sd_e) + r * &cov_u * r.transpose();
        let cross = -(r * &cov_u);

        let mut mean = DVector::zeros(p + q);
        mean.rows_mut(0, p).copy_from(&(&summary.beta_ls - r * &self.mean_u));
        mean.rows_mut(p, q).copy_from(&self.mean_u);
        let mut cov = DMatrix::zeros(p + q, p + q);
        cov.view_mut((0, 0), (p, p)).copy_from(&cov_beta);
        cov.view_mut((0, p), (p, q)).copy_from(&cross);
        cov.view_mut((p, 0), (q, p)).copy_from(&cross.transpose());
        cov.view_mut((p, p), (q, q)).copy_from(&cov_u);
        (mean, cov)
    }
}

/// One draw from π(θ | σ², y).
pub fn sample_theta<R: RngCore + ?Sized>(
    summary: &DesignSummary,
    sigma2: &Variances,
    rng: &mut R,
) -> Result<Theta> {
    Ok(ThetaSampler::new(summary, sigma2)?.sample(summary, rng))
}

/// Draws from IG(shape, scale) as the reciprocal of a Gamma(shape, 1/scale).
pub fn sample_inverse_gamma<R: RngCore + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite()) {
        return Err(Error::InvalidShape { shape, scale });
    }
    let g = Gamma::new(shape, 1.0 / scale).map_err(|_| Error::InvalidShape { shape, scale })?;
    let v = 1.0 / g.sample(rng);
    // a chain collapsing toward 0 or ∞ eventually leaves the f64 range
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::NonFinite(format!("inverse-gamma draw {v} (shape {shape}, scale {scale:e})")));
    }
    Ok(v)
}

/// True when θ lies in the null set: ‖uᵢ‖ = 0 exactly for some block with bᵢ = 0.
pub fn in_null_set(u: &DVector<f64>, offsets: &[usize], prior: &PriorSpec) -> bool {
    prior
        .zero_scale_blocks()
        .into_iter()
        .any(|i| u.rows(offsets[i], offsets[i + 1] - offsets[i]).norm_squared() == 0.0)
}

/// One draw from π(σ² | θ, y), with the IG(1,1) product on the null set.
pub fn sample_sigma2<R: RngCore + ?Sized>(
    design: &GlmmDesign,
    prior: &PriorSpec,
    theta: &Theta,
    rng: &mut R,
) -> Result<Variances> {
    let q_sizes = design.q_sizes();
    let offsets = crate::model::block_offsets(&q_sizes);
    let r = q_sizes.len();
    if !theta.beta.iter().chain(theta.u.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("θ".into()));
    }
    if in_null_set(&theta.u, &offsets, prior) {
        let e = sample_inverse_gamma(1.0, 1.0, rng)?;
        let u = (0..r).map(|_| sample_inverse_gamma(1.0, 1.0, rng)).collect::<Result<Vec<_>>>()?;
        return Ok(Variances { e, u });
    }
    let rss = design.residual(&theta.beta, &theta.u).norm_squared();
    let e = sample_inverse_gamma(design.n() as f64 / 2.0 + prior.a_e, prior.b_e + rss / 2.0, rng)?;
    let mut u = Vec::with_capacity(r);
    for i in 0..r {
        let ui = theta.u.rows(offsets[i], q_sizes[i]);
        let shape = q_sizes[i] as f64 / 2.0 + prior.a[i];
        u.push(sample_inverse_gamma(shape, prior.b[i] + ui.norm_squared() / 2.0, rng)?);
    }
    Ok(Variances { e, u })
}

/// log f_IG(v; c, d) = c ln d − ln Γ(c) − (c+1) ln v − d/v, and −∞ for v ≤ 0.
pub fn inverse_gamma_logpdf(v: f64, c: f64, d: f64) -> Result<f64> {
    if !(c > 0.0 && d > 0.0) {
        return Err(Error::InvalidShape { shape: c, scale: d });
    }
    if v <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(c * d.ln() - ln_gamma(c) - (c + 1.0) * v.ln() - d / v)
}

/// θ ~ π(θ | σ²ₙ, y) followed by σ² ~ π(σ² | θ, y).
pub fn gibbs_step<R: RngCore + ?Sized>(
    state: &ParamState,
    summary: &DesignSummary,
    design: &GlmmDesign,
    prior: &PriorSpec,
    rng: &mut R,
) -> Result<ParamState> {
    let theta = sample_theta(summary, &state.sigma2, rng)?;
    let sigma2 = sample_sigma2(design, prior, &theta, rng)?;
    Ok(ParamState { beta: theta.beta, u: theta.u, sigma2 })
}

/// log π*(θ, σ² | y): normal likelihood × normal random effects × power prior.
pub fn log_unnormalized_posterior(
    design: &GlmmDesign,
    prior: &PriorSpec,
    theta: &Theta,
    sigma2: &Variances,
) -> Result<f64> {
    sigma2.check()?;
    let n = design.n() as f64;
    let rss = design.residual(&theta.beta, &theta.u).norm_squared();
    let mut lp = -0.5 * n * (LN_2PI + sigma2.e.ln()) - rss / (2.0 * sigma2.e);
    lp += -(prior.a_e + 1.0) * sigma2.e.ln() - prior.b_e / sigma2.e;
    let mut off = 0;
    for (i, z) in design.z_blocks().iter().enumerate() {
        let qi = z.ncols();
        let s = sigma2.u[i];
        let ui2 = theta.u.rows(off, qi).norm_squared();
        lp += -0.5 * qi as f64 * (LN_2PI + s.ln()) - ui2 / (2.0 * s);
        lp += -(prior.a[i] + 1.0) * s.ln() - prior.b[i] / s;
        off += qi;
    }
    if !lp.is_finite() {
        return Err(Error::NonFinite("log posterior".into()));
    }
    Ok(lp)
}
