//! Gibbs chains, ergodic averages and batch-means standard errors.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::{gibbs_step, ParamState, RngStream};
use crate::model::{summarize_design, validate_model, GlmmDesign, PriorSpec, DEFAULT_RANK_TOL};

/// Stated with every standard error: the CLT needs E_π|g|^{2+δ} < ∞, which
/// is not checked for user-supplied g.
pub const CLT_ASSUMPTION: &str = "E|g|^(2+delta) < infinity under the posterior is assumed, not verified";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub burn_in: usize,
    pub n_samples: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig { burn_in: 1000, n_samples: 10_000, thin: 1, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub config: ChainConfig,
    pub columns: Vec<String>,
    pub wall_time_secs: f64,
    pub design_fingerprint: String,
    pub prior_fingerprint: String,
    pub p: usize,
    pub q: usize,
    pub r: usize,
    pub version: String,
}

/// Retained draws, one row per kept iteration, in (β, u, σ²_e, σ²_u) order.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRun {
    pub meta: ChainMeta,
    ncols: usize,
    data: Vec<f64>,
}

impl ChainRun {
    /// Wraps precomputed rows (for analysis of stored or synthetic draws).
    pub fn from_rows(meta: ChainMeta, rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = meta.columns.len();
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != ncols {
                return Err(Error::DimensionMismatch(format!("row {i} has {} values, expected {ncols}", row.len())));
            }
            data.extend_from_slice(row);
        }
        Ok(ChainRun { meta, ncols, data })
    }

    pub fn n_rows(&self) -> usize {
        self.data.len().checked_div(self.ncols).unwrap_or(0)
    }

    pub fn n_cols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.ncols.max(1))
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.meta.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// g evaluated on every retained row.
    pub fn map<G: Fn(&[f64]) -> f64>(&self, g: G) -> Vec<f64> {
        self.rows().map(g).collect()
    }
}

/// Column names: beta_1..beta_p, u_{block}_{level}, sigma2_e, sigma2_u_{block}.
pub fn column_names(p: usize, q_sizes: &[usize]) -> Vec<String> {
    let mut cols: Vec<String> = (1..=p).map(|k| format!("beta_{k}")).collect();
    for (i, &qi) in q_sizes.iter().enumerate() {
        cols.extend((1..=qi).map(|j| format!("u_{}_{j}", i + 1)));
    }
    cols.push("sigma2_e".into());
    cols.extend((1..=q_sizes.len()).map(|i| format!("sigma2_u_{i}")));
    cols
}

fn hash_f64s<'a>(h: &mut Sha256, vals: impl Iterator<Item = &'a f64>) {
    for v in vals {
        h.update(v.to_le_bytes());
    }
}

/// SHA-256 over shapes and the little-endian bytes of y, X and every Zᵢ.
pub fn design_fingerprint(design: &GlmmDesign) -> String {
    let mut h = Sha256::new();
    h.update((design.n() as u64).to_le_bytes());
    h.update((design.p() as u64).to_le_bytes());
    hash_f64s(&mut h, design.y().iter());
    hash_f64s(&mut h, design.x().iter());
    for z in design.z_blocks() {
        h.update((z.ncols() as u64).to_le_bytes());
        hash_f64s(&mut h, z.iter());
    }
    format!("{:x}", h.finalize())
}

pub fn prior_fingerprint(prior: &PriorSpec) -> String {
    let mut h = Sha256::new();
    h.update((prior.r() as u64).to_le_bytes());
    hash_f64s(&mut h, [prior.a_e, prior.b_e].iter());
    hash_f64s(&mut h, prior.a.iter());
    hash_f64s(&mut h, prior.b.iter());
    format!("{:x}", h.finalize())
}

/// Runs the two-block Gibbs sampler: `burn_in` discarded steps, then
/// `n_samples` retained states, one every `thin` steps.
pub fn run_chain(
    design: &GlmmDesign,
    prior: &PriorSpec,
    init: Option<ParamState>,
    config: &ChainConfig,
) -> Result<ChainRun> {
    if config.n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be ≥ 1".into()));
    }
    if config.thin == 0 {
        return Err(Error::InvalidArgument("thin must be ≥ 1".into()));
    }
    let validation = validate_model(design, prior, DEFAULT_RANK_TOL)?;
    if !validation.all_pass() {
        return Err(Error::ValidationFailed(format!("{} fail", validation.failures().join(", "))));
    }
    let start = Instant::now();
    let summary = summarize_design(design, DEFAULT_RANK_TOL)?;
    let mut state = match init {
        Some(s) => {
            s.check(&summary)?;
            s
        }
        None => ParamState::initial(&summary),
    };
    let mut rng = RngStream::new(config.seed);
    let columns = column_names(summary.p, &summary.q_sizes);
    let ncols = columns.len();
    let mut data = Vec::with_capacity(config.n_samples * ncols);

    for _ in 0..config.burn_in {
        state = gibbs_step(&state, &summary, design, prior, &mut rng)?;
    }
    for _ in 0..config.n_samples {
        for _ in 0..config.thin {
            state = gibbs_step(&state, &summary, design, prior, &mut rng)?;
        }
        data.extend(state.to_row());
    }

    let meta = ChainMeta {
        config: *config,
        columns,
        wall_time_secs: start.elapsed().as_secs_f64(),
        design_fingerprint: design_fingerprint(design),
        prior_fingerprint: prior_fingerprint(prior),
        p: summary.p,
        q: summary.q,
        r: summary.r,
        version: env!("CARGO_PKG_VERSION").into(),
    };
    Ok(ChainRun { meta, ncols, data })
}

fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::TooFewSamples("no draws".into()));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("g produced {bad}")));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// (1/m) Σ g(draws).
pub fn ergodic_average<G: Fn(&[f64]) -> f64>(run: &ChainRun, g: G) -> Result<f64> {
    mean(&run.map(g))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McseEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n_batches: usize,
    pub batch_size: usize,
    pub n_used: usize,
}

/// Batch means on a series: contiguous equal batches, remainder dropped.
/// `n_batches` defaults to ⌊√n⌋.
pub fn batch_means(values: &[f64], n_batches: Option<usize>) -> Result<McseEstimate> {
    let n = values.len();
    let b = n_batches.unwrap_or_else(|| (n as f64).sqrt().floor() as usize);
    if b < 2 || n < 2 * b {
        return Err(Error::TooFewSamples(format!("{n} draws cannot form {b} batches of size ≥ 2 (need ≥ 2 batches)")));
    }
    let size = n / b;
    let used = &values[..size * b];
    let estimate = mean(used)?;
    let batch_means: Vec<f64> = used.chunks_exact(size).map(|c| c.iter().sum::<f64>() / size as f64).collect();
    let var = batch_means.iter().map(|m| (m - estimate).powi(2)).sum::<f64>() / (b - 1) as f64;
    Ok(McseEstimate { estimate, std_error: (var / b as f64).sqrt(), n_batches: b, batch_size: size, n_used: size * b })
}

pub fn batch_means_mcse<G: Fn(&[f64]) -> f64>(run: &ChainRun, g: G, n_batches: Option<usize>) -> Result<McseEstimate> {
    batch_means(&run.map(g), n_batches)
}

/// Draws as headerless CSV, 17 significant digits per value.
pub fn write_draws_csv<W: Write>(run: &ChainRun, mut w: W) -> std::io::Result<()> {
    let mut line = String::new();
    for row in run.rows() {
        line.clear();
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&format!("{v:.16e}"));
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()
}

/// Sidecar naming the CSV columns.
pub fn columns_json(run: &ChainRun) -> serde_json::Value {
    serde_json::json!({ "columns": run.meta.columns })
}
