//! Design and prior representation, well-definedness checks, and the frozen
//! linear algebra every other module consumes.
//!
//! The model is y = Xβ + Σᵢ Zᵢuᵢ + e with uᵢ ~ N(0, σ²_{uᵢ} I) and
//! e ~ N(0, σ²_e I). All projections are taken with respect to the column
//! space of X; `Z̃ = (I − P_X)Z` and `M = Z̃ᵀZ̃ = Zᵀ(I − P_X)Z` appear
//! throughout.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sorted_symmetric_eigen, PivotedQr};

/// Relative eigenvalue cutoff used for ranks, pseudo-inverses and projections.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Absolute noise floor for eigenvalues of M, in units of ε·‖Z‖²_F.
const EIGEN_NOISE_FACTOR: f64 = 1e3;

/// Observed response with the fixed- and random-effect design matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmmDesign {
    y: DVector<f64>,
    x: DMatrix<f64>,
    z_blocks: Vec<DMatrix<f64>>,
}

impl GlmmDesign {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, z_blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::DimensionMismatch("y must be non-empty".into()));
        }
        if x.ncols() == 0 {
            return Err(Error::DimensionMismatch("X must have at least one column".into()));
        }
        if x.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "X has {} rows, y has {n}",
                x.nrows()
            )));
        }
        if z_blocks.is_empty() {
            return Err(Error::DimensionMismatch("at least one random-effect block is required".into()));
        }
        for (i, z) in z_blocks.iter().enumerate() {
            if z.ncols() == 0 {
                return Err(Error::DimensionMismatch(format!("Z_{} has no columns", i + 1)));
            }
            if z.nrows() != n {
                return Err(Error::DimensionMismatch(format!(
                    "Z_{} has {} rows, y has {n}",
                    i + 1,
                    z.nrows()
                )));
            }
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("y".into()));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("X".into()));
        }
        for (i, z) in z_blocks.iter().enumerate() {
            if !z.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("Z_{}", i + 1)));
            }
        }
        Ok(GlmmDesign { y, x, z_blocks })
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z_blocks(&self) -> &[DMatrix<f64>] {
        &self.z_blocks
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn r(&self) -> usize {
        self.z_blocks.len()
    }

    pub fn q_sizes(&self) -> Vec<usize> {
        self.z_blocks.iter().map(|z| z.ncols()).collect()
    }

    pub fn q(&self) -> usize {
        self.z_blocks.iter().map(|z| z.ncols()).sum()
    }

    /// Z = (Z₁ ⋯ Z_r), assembled on demand.
    pub fn z(&self) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.n(), self.q());
        let mut off = 0;
        for blk in &self.z_blocks {
            z.view_mut((0, off), blk.shape()).copy_from(blk);
            off += blk.ncols();
        }
        z
    }

    /// W = (X Z).
    pub fn w(&self) -> DMatrix<f64> {
        let (n, p) = (self.n(), self.p());
        let mut w = DMatrix::zeros(n, p + self.q());
        w.view_mut((0, 0), (n, p)).copy_from(&self.x);
        let mut off = p;
        for blk in &self.z_blocks {
            w.view_mut((0, off), blk.shape()).copy_from(blk);
            off += blk.ncols();
        }
        w
    }

    /// y − Xβ − Zu without assembling W.
    pub fn residual(&self, beta: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut res = &self.y - &self.x * beta;
        let mut off = 0;
        for blk in &self.z_blocks {
            let ui = u.rows(off, blk.ncols());
            res -= blk * ui;
            off += blk.ncols();
        }
        res
    }
}

/// Start offsets of each block inside u (length r + 1, last entry q).
pub fn block_offsets(q_sizes: &[usize]) -> Vec<usize> {
    let mut offs = Vec::with_capacity(q_sizes.len() + 1);
    let mut acc = 0;
    offs.push(0);
    for &qi in q_sizes {
        acc += qi;
        offs.push(acc);
    }
    offs
}

/// Hyperparameters of the power prior
/// (σ²_e)^{−(a_e+1)} e^{−b_e/σ²_e} Πᵢ (σ²_{uᵢ})^{−(aᵢ+1)} e^{−bᵢ/σ²_{uᵢ}}, flat in β.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub a_e: f64,
    pub b_e: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl PriorSpec {
    pub fn new(a_e: f64, b_e: f64, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let prior = PriorSpec { a_e, b_e, a, b };
        prior.check()?;
        Ok(prior)
    }

    /// b = 0 throughout, with the given exponents.
    pub fn power(a_e: f64, a: Vec<f64>) -> Self {
        let r = a.len();
        PriorSpec { a_e, b_e: 0.0, a, b: vec![0.0; r] }
    }

    pub fn r(&self) -> usize {
        self.a.len()
    }

    fn check(&self) -> Result<()> {
        if self.a.len() != self.b.len() {
            return Err(Error::DimensionMismatch(format!(
                "prior has {} a-values but {} b-values",
                self.a.len(),
                self.b.len()
            )));
        }
        let all = [self.a_e, self.b_e].into_iter().chain(self.a.iter().copied()).chain(self.b.iter().copied());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prior hyperparameters".into()));
        }
        Ok(())
    }

    /// Checks lengths against a design with `r` random-effect blocks.
    pub fn check_for(&self, r: usize) -> Result<()> {
        self.check()?;
        if self.r() != r {
            return Err(Error::DimensionMismatch(format!(
                "prior has {} random-effect entries, design has r = {r}",
                self.r()
            )));
        }
        Ok(())
    }

    /// Indices i with bᵢ = 0 (the set A).
    pub fn zero_scale_blocks(&self) -> Vec<usize> {
        self.b.iter().enumerate().filter(|(_, &b)| b == 0.0).map(|(i, _)| i).collect()
    }

    /// s̃ = min{q₁+2a₁, …, q_r+2a_r, N+2a_e}.
    pub fn s_tilde(&self, n: usize, q_sizes: &[usize]) -> f64 {
        q_sizes
            .iter()
            .zip(&self.a)
            .map(|(&qi, &ai)| qi as f64 + 2.0 * ai)
            .fold(n as f64 + 2.0 * self.a_e, f64::min)
    }
}

/// Smallest eigenvalue kept and largest eigenvalue discarded at the rank cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenGap {
    pub cutoff: f64,
    pub smallest_kept: Option<f64>,
    pub largest_dropped: Option<f64>,
}

/// Derived linear algebra for a design, computed once.
#[derive(Debug, Clone)]
pub struct DesignSummary {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub r: usize,
    pub q_sizes: Vec<usize>,
    pub offsets: Vec<usize>,
    pub rank_tol: f64,
    /// rank of M = Zᵀ(I − P_X)Z
    pub t: usize,
    /// ‖(I − P_W)y‖²
    pub sse: f64,
    pub lambda_max: f64,
    /// Eigenvalues of M, descending.
    pub eigvals: DVector<f64>,
    /// Eigenvectors of M as columns, matching `eigvals`.
    pub eigvecs: DMatrix<f64>,
    /// ζᵢ = tr(Rᵢ(I − P_M)Rᵢᵀ)
    pub zeta: Vec<f64>,
    /// ξᵢ = tr(Rᵢ M⁺ Rᵢᵀ)
    pub xi: Vec<f64>,
    /// ‖(I − P_X)Z‖_F
    pub fro_izx_z: f64,
    /// ‖(I − P_X)y‖
    pub norm_izx_y: f64,
    /// Zᵀ(I − P_X)y
    pub ztilde_y: DVector<f64>,
    /// M itself.
    pub ztz_resid: DMatrix<f64>,
    /// Z̃ = (I − P_X)Z.
    pub z_resid: DMatrix<f64>,
    pub xtx_inv: DMatrix<f64>,
    /// Upper-triangular F with F Fᵀ = (XᵀX)⁻¹.
    pub xtx_inv_factor: DMatrix<f64>,
    /// (XᵀX)⁻¹Xᵀy
    pub beta_ls: DVector<f64>,
    /// (XᵀX)⁻¹XᵀZ
    pub r_mat: DMatrix<f64>,
    pub eigen_gap: EigenGap,
}

impl DesignSummary {
    /// Moore–Penrose inverse M⁺ from the stored spectral decomposition.
    pub fn pseudo_inverse(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.q, self.q);
        for k in 0..self.t {
            let v = self.eigvecs.column(k);
            out += (v * v.transpose()) / self.eigvals[k];
        }
        out
    }

    /// P_M, the projection onto the column space of M.
    pub fn projection(&self) -> DMatrix<f64> {
        let v = self.eigvecs.columns(0, self.t);
        v * v.transpose()
    }

    /// I − P_M.
    pub fn null_projection(&self) -> DMatrix<f64> {
        DMatrix::identity(self.q, self.q) - self.projection()
    }

    pub fn s_tilde(&self, prior: &PriorSpec) -> f64 {
        prior.s_tilde(self.n, &self.q_sizes)
    }
}

fn x_rank(design: &GlmmDesign, rank_tol: f64) -> usize {
    PivotedQr::new(design.x()).rank(rank_tol.sqrt())
}

/// Computes every derived quantity of the design.
pub fn summarize_design(design: &GlmmDesign, rank_tol: f64) -> Result<DesignSummary> {
    if !(rank_tol.is_finite() && rank_tol > 0.0) {
        return Err(Error::InvalidArgument(format!("rank_tol must be positive, got {rank_tol}")));
    }
    let (n, p, q, r) = (design.n(), design.p(), design.q(), design.r());
    let rank = x_rank(design, rank_tol);
    if rank < p {
        return Err(Error::RankDeficientX { rank, p });
    }

    let qr = design.x().clone().qr();
    let q1 = qr.q();
    let rx = qr.r();
    let factor = rx
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or(Error::RankDeficientX { rank: p - 1, p })?;
    let xtx_inv = &factor * factor.transpose();

    let y = design.y();
    let z = design.z();
    let q1t_y = q1.transpose() * y;
    let q1t_z = q1.transpose() * &z;
    let beta_ls = &factor * &q1t_y;
    let r_mat = &factor * &q1t_z;
    let y_resid = y - &q1 * &q1t_y;
    let z_resid = &z - &q1 * &q1t_z;

    let m = z_resid.transpose() * &z_resid;
    let (eigvals, eigvecs) = sorted_symmetric_eigen(&m);
    let lambda_max = eigvals.iter().copied().fold(0.0, f64::max);
    let noise = EIGEN_NOISE_FACTOR * f64::EPSILON * z.norm_squared();
    let cutoff = (rank_tol * lambda_max).max(noise);
    let t = eigvals.iter().filter(|&&l| l > cutoff).count();
    let eigen_gap = EigenGap {
        cutoff,
        smallest_kept: (t > 0).then(|| eigvals[t - 1]),
        largest_dropped: (t < q).then(|| eigvals[t]),
    };

    let q_sizes = design.q_sizes();
    let offsets = block_offsets(&q_sizes);
    let mut zeta = vec![0.0; r];
    let mut xi = vec![0.0; r];
    for i in 0..r {
        let (mut z_acc, mut x_acc) = (0.0, 0.0);
        for j in offsets[i]..offsets[i + 1] {
            for k in 0..t {
                x_acc += eigvecs[(j, k)] * eigvecs[(j, k)] / eigvals[k];
            }
            // I − P_M spans the dropped eigenvectors; exactly 0 when t = q
            for k in t..q {
                z_acc += eigvecs[(j, k)] * eigvecs[(j, k)];
            }
        }
        zeta[i] = z_acc;
        xi[i] = x_acc;
    }

    let sse = compute_sse_with_tol(design, rank_tol)?;

    Ok(DesignSummary {
        n,
        p,
        q,
        r,
        q_sizes,
        offsets,
        rank_tol,
        t,
        sse,
        lambda_max,
        eigvals,
        eigvecs,
        zeta,
        xi,
        fro_izx_z: z_resid.norm(),
        norm_izx_y: y_resid.norm(),
        ztilde_y: z_resid.transpose() * &y_resid,
        ztz_resid: m,
        z_resid,
        xtx_inv,
        xtx_inv_factor: factor,
        beta_ls,
        r_mat,
        eigen_gap,
    })
}

/// SSE = ‖(I − P_W)y‖² via a rank-revealing orthogonal factorization of W.
pub fn compute_sse(design: &GlmmDesign) -> Result<f64> {
    compute_sse_with_tol(design, DEFAULT_RANK_TOL)
}

pub fn compute_sse_with_tol(design: &GlmmDesign, rank_tol: f64) -> Result<f64> {
    let w = design.w();
    let qr = PivotedQr::new(&w);
    let rank = qr.rank(rank_tol.sqrt());
    let res = qr.residual(design.y(), rank);
    let sse = res.norm_squared();
    if !sse.is_finite() {
        return Err(Error::NonFinite("SSE".into()));
    }
    // residuals at rounding level mean y ∈ col(W)
    if sse.sqrt() <= 1e3 * f64::EPSILON * design.y().norm() {
        return Ok(0.0);
    }
    Ok(sse)
}

/// Outcome of the four well-definedness conditions (S1)–(S4).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub rank_x: usize,
    pub sse: f64,
    pub s_tilde: f64,
    /// rank(X) = p
    pub s1: bool,
    /// min bᵢ ≥ 0
    pub s2: bool,
    /// 2b_e + SSE > 0
    pub s3: bool,
    /// s̃ > 0
    pub s4: bool,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.s1 && self.s2 && self.s3 && self.s4
    }

    pub fn failures(&self) -> Vec<&'static str> {
        [(self.s1, "S1"), (self.s2, "S2"), (self.s3, "S3"), (self.s4, "S4")]
            .into_iter()
            .filter(|(ok, _)| !ok)
            .map(|(_, name)| name)
            .collect()
    }
}

/// Evaluates (S1)–(S4). Failures are reported, not raised; only a prior whose
/// length does not match the design is an error.
pub fn validate_model(design: &GlmmDesign, prior: &PriorSpec, rank_tol: f64) -> Result<ValidationReport> {
    prior.check_for(design.r())?;
    let rank_x = x_rank(design, rank_tol);
    let sse = compute_sse_with_tol(design, rank_tol)?;
    let s_tilde = prior.s_tilde(design.n(), &design.q_sizes());
    Ok(ValidationReport {
        rank_x,
        sse,
        s_tilde,
        s1: rank_x == design.p(),
        s2: prior.b.iter().all(|&b| b >= 0.0),
        s3: 2.0 * prior.b_e + sse > 0.0,
        s4: s_tilde > 0.0,
    })
}

/// One-way random effects design: X = 1_N, Z = ⊕ 1_{nᵢ}.
pub fn build_oneway(c: usize, n_sizes: &[usize], y: &[f64]) -> Result<GlmmDesign> {
    if c < 2 {
        return Err(Error::DimensionMismatch(format!("one-way model needs c ≥ 2, got {c}")));
    }
    if n_sizes.len() != c {
        return Err(Error::DimensionMismatch(format!(
            "expected {c} group sizes, got {}",
            n_sizes.len()
        )));
    }
    if n_sizes.contains(&0) {
        return Err(Error::DimensionMismatch("group sizes must be ≥ 1".into()));
    }
    let n: usize = n_sizes.iter().sum();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("y has length {}, expected {n}", y.len())));
    }
    let mut z = DMatrix::zeros(n, c);
    let mut row = 0;
    for (g, &ni) in n_sizes.iter().enumerate() {
        for _ in 0..ni {
            z[(row, g)] = 1.0;
            row += 1;
        }
    }
    GlmmDesign::new(DVector::from_column_slice(y), DMatrix::from_element(n, 1, 1.0), vec![z])
}

/// Two-way additive design with one observation per cell, y in
/// lexicographic order: Z₁ = I_m ⊗ 1_n, Z₂ = 1_m ⊗ I_n.
pub fn build_twoway(m: usize, n: usize, y: &[f64]) -> Result<GlmmDesign> {
    if m < 2 || n < 2 {
        return Err(Error::DimensionMismatch(format!("two-way model needs m, n ≥ 2, got {m}, {n}")));
    }
    if y.len() != m * n {
        return Err(Error::DimensionMismatch(format!(
            "y has length {}, expected {}",
            y.len(),
            m * n
        )));
    }
    let big_n = m * n;
    let mut z1 = DMatrix::zeros(big_n, m);
    let mut z2 = DMatrix::zeros(big_n, n);
    for i in 0..m {
        for j in 0..n {
            z1[(i * n + j, i)] = 1.0;
            z2[(i * n + j, j)] = 1.0;
        }
    }
    GlmmDesign::new(DVector::from_column_slice(y), DMatrix::from_element(big_n, 1, 1.0), vec![z1, z2])
}
