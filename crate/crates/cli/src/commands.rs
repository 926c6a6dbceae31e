//! Subcommand bodies. Each returns the process exit code or an input error.

use std::fs;
use std::path::{Path, PathBuf};

use evalexpr::{ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Node, Value};
use mixedergo::ergodicity::{analyze, AnalysisOptions, DriftCertificate, ErgodicityReport, Layout, Verdict};
use mixedergo::kernel::Variances;
use mixedergo::mcmc::{batch_means, columns_json, run_chain, write_draws_csv, ChainConfig, ChainMeta, ChainRun, CLT_ASSUMPTION};
use mixedergo::model::{summarize_design, validate_model, ValidationReport};
use mixedergo::oracle::{
    check_expectation_bounds, check_lemma_a1, mc_check_drift, sigma2_marginal_quadrature, DriftCheckReport,
    ExpectationReport, LemmaA1Report, QuadratureResult, QuadratureSpec,
};
use mixedergo::{GlmmDesign, PriorSpec, RngStream};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::io::{self, input_err, CliResult};

pub const EXIT_CERTIFIED: u8 = 0;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_PROPER: u8 = 3;
pub const EXIT_UNESTABLISHED: u8 = 4;

pub const DRAWS_FILE: &str = "draws.csv";
pub const COLUMNS_FILE: &str = "draws.columns.json";
pub const META_FILE: &str = "meta.json";
pub const REPORT_FILE: &str = "report.json";
pub const ESTIMATES_FILE: &str = "estimates.json";

pub fn verdict_code(v: Verdict) -> u8 {
    match v {
        Verdict::GeometricallyErgodic => EXIT_CERTIFIED,
        Verdict::ProperOnly => EXIT_PROPER,
        Verdict::Unestablished => EXIT_UNESTABLISHED,
    }
}

#[derive(Debug, Clone)]
pub struct AnalysisArgs {
    pub grid_size: usize,
    pub k_budget: usize,
    pub c: Option<f64>,
    pub rank_tol: f64,
}

impl AnalysisArgs {
    fn options(&self, layout: Option<Layout>) -> AnalysisOptions {
        AnalysisOptions { rank_tol: self.rank_tol, grid_size: self.grid_size, k_budget: self.k_budget, c: self.c, layout }
    }
}

pub struct Model {
    pub design: GlmmDesign,
    pub prior: PriorSpec,
    pub layout: Option<Layout>,
}

pub fn load_model(design: &Path, prior: &Path) -> CliResult<Model> {
    let loaded = io::load_design(design)?;
    let prior = io::load_prior(prior)?;
    if prior.r() != loaded.design.r() {
        return Err(input_err(format!(
            "prior has {} random-effect blocks, design has {}",
            prior.r(),
            loaded.design.r()
        )));
    }
    Ok(Model { design: loaded.design, prior, layout: loaded.layout })
}

fn print_json<T: Serialize>(value: &T) -> CliResult<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(input_err(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

pub fn cmd_validate(model: &Model, rank_tol: f64) -> CliResult<u8> {
    let report: ValidationReport = validate_model(&model.design, &model.prior, rank_tol)?;
    print_json(&report)?;
    Ok(if report.all_pass() { EXIT_CERTIFIED } else { EXIT_UNESTABLISHED })
}

pub fn run_check(model: &Model, args: &AnalysisArgs) -> CliResult<ErgodicityReport> {
    Ok(analyze(&model.design, &model.prior, &args.options(model.layout.clone()))?)
}

pub fn cmd_check(model: &Model, args: &AnalysisArgs, out: Option<&Path>) -> CliResult<u8> {
    let report = run_check(model, args)?;
    print_json(&report)?;
    if let Some(dir) = out {
        io::write_json(&dir.join(REPORT_FILE), &report)?;
    }
    Ok(verdict_code(report.verdict))
}

/// Certificate status carried alongside the draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateStatus {
    pub verdict: Verdict,
    pub proper: bool,
    pub witness_s: Option<f64>,
    pub drift: Option<DriftCertificate>,
    pub forced: bool,
}

impl CertificateStatus {
    pub fn from_report(report: &ErgodicityReport, forced: bool) -> Self {
        CertificateStatus {
            verdict: report.verdict,
            proper: report.proper(),
            witness_s: report.theorem2.as_ref().and_then(|t| t.witness_s),
            drift: report.drift.clone(),
            forced,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub chain: ChainMeta,
    pub certificate: CertificateStatus,
}

pub struct SampleOutcome {
    pub code: u8,
    pub run: Option<ChainRun>,
    pub report: ErgodicityReport,
}

/// Checks, then samples when propriety is established or `force` is set.
pub fn sample_into(model: &Model, args: &AnalysisArgs, cfg: &ChainConfig, out: &Path, force: bool) -> CliResult<SampleOutcome> {
    fs::create_dir_all(out).map_err(|e| input_err(format!("{}: {e}", out.display())))?;
    tempfile::tempfile_in(out).map_err(|e| input_err(format!("{}: not writable: {e}", out.display())))?;
    let report = run_check(model, args)?;
    let well_defined = report.proposition1.all_pass();
    if !report.proper() || !well_defined {
        if !force || !well_defined {
            log::error!(
                "posterior propriety not established (verdict {:?}); {}",
                report.verdict,
                if well_defined { "pass --force to sample anyway" } else { "the sampler is not well defined" }
            );
            return Ok(SampleOutcome { code: EXIT_UNESTABLISHED, run: None, report });
        }
        log::warn!("sampling without established propriety; if the posterior is improper the chain cannot be geometrically ergodic");
    }
    let run = run_chain(&model.design, &model.prior, None, cfg)?;
    let mut csv = Vec::new();
    write_draws_csv(&run, &mut csv).map_err(|e| input_err(e.to_string()))?;
    io::write_atomic(&out.join(DRAWS_FILE), &csv)?;
    io::write_json(&out.join(COLUMNS_FILE), &columns_json(&run))?;
    let meta = RunMeta { chain: run.meta.clone(), certificate: CertificateStatus::from_report(&report, force && !report.proper()) };
    io::write_json(&out.join(META_FILE), &meta)?;
    io::write_json(&out.join(REPORT_FILE), &report)?;
    Ok(SampleOutcome { code: EXIT_CERTIFIED, run: Some(run), report })
}

pub fn cmd_sample(model: &Model, args: &AnalysisArgs, cfg: &ChainConfig, out: &Path, force: bool) -> CliResult<u8> {
    let outcome = sample_into(model, args, cfg, out, force)?;
    match outcome.run {
        Some(run) => {
            log::info!("{} draws written to {}", run.n_rows(), out.join(DRAWS_FILE).display());
            print_json(&serde_json::json!({
                "draws": out.join(DRAWS_FILE),
                "columns": out.join(COLUMNS_FILE),
                "meta": out.join(META_FILE),
                "verdict": outcome.report.verdict,
            }))?;
        }
        None => print_json(&outcome.report)?,
    }
    Ok(outcome.code)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnEstimate {
    pub name: String,
    pub mean: f64,
    pub mcse: f64,
    pub n_batches: usize,
    pub batch_size: usize,
    pub n_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub n_draws: usize,
    pub columns: Vec<ColumnEstimate>,
    pub expressions: Vec<ColumnEstimate>,
    pub certificate: Option<CertificateStatus>,
    pub clt_assumption: String,
}

#[derive(Debug, Deserialize)]
struct ColumnsSidecar {
    columns: Vec<String>,
}

/// Sidecar path next to a draws file: `draws.csv` → `draws.columns.json`.
pub fn sidecar_for(draws: &Path) -> PathBuf {
    let stem = draws.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    draws.with_file_name(format!("{stem}.columns.json"))
}

fn estimate(name: &str, values: &[f64], n_batches: Option<usize>) -> CliResult<ColumnEstimate> {
    let e = batch_means(values, n_batches).map_err(|e| input_err(format!("{name}: {e}")))?;
    Ok(ColumnEstimate {
        name: name.to_string(),
        mean: e.estimate,
        mcse: e.std_error,
        n_batches: e.n_batches,
        batch_size: e.batch_size,
        n_used: e.n_used,
    })
}

/// `name=expression` over the column names.
pub fn parse_expr(spec: &str) -> CliResult<(String, Node<DefaultNumericTypes>)> {
    let (name, expr) = spec.split_once('=').ok_or_else(|| input_err(format!("expression {spec:?} must look like name=expr")))?;
    if name.trim().is_empty() {
        return Err(input_err(format!("expression {spec:?} has an empty name")));
    }
    let node = evalexpr::build_operator_tree::<DefaultNumericTypes>(expr)
        .map_err(|e| input_err(format!("expression {name}: {e}")))?;
    Ok((name.trim().to_string(), node))
}

pub fn compute_estimates(
    names: &[String],
    columns: &[Vec<f64>],
    exprs: &[(String, Node<DefaultNumericTypes>)],
    n_batches: Option<usize>,
    certificate: Option<CertificateStatus>,
) -> CliResult<Estimates> {
    let n = columns.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(names.len());
    for (name, col) in names.iter().zip(columns) {
        out.push(estimate(name, col, n_batches)?);
    }
    let mut expressions = Vec::with_capacity(exprs.len());
    for (name, node) in exprs {
        let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
        let mut values = Vec::with_capacity(n);
        for i in 0..n {
            for (cname, col) in names.iter().zip(columns) {
                ctx.set_value(cname.clone(), Value::Float(col[i])).map_err(|e| input_err(e.to_string()))?;
            }
            let v = node.eval_number_with_context(&ctx).map_err(|e| input_err(format!("expression {name}: {e}")))?;
            if !v.is_finite() {
                return Err(input_err(format!("expression {name} is {v} at draw {}", i + 1)));
            }
            values.push(v);
        }
        expressions.push(estimate(name, &values, n_batches)?);
    }
    Ok(Estimates { n_draws: n, columns: out, expressions, certificate, clt_assumption: CLT_ASSUMPTION.to_string() })
}

pub fn cmd_analyze(draws: &Path, n_batches: Option<usize>, exprs: &[String], out: Option<&Path>) -> CliResult<u8> {
    let sidecar: ColumnsSidecar = io::read_json(&sidecar_for(draws))?;
    let columns = io::read_columns(draws, sidecar.columns.len())?;
    let meta_path = draws.with_file_name(META_FILE);
    let certificate = if meta_path.exists() { Some(io::read_json::<RunMeta>(&meta_path)?.certificate) } else { None };
    let parsed = exprs.iter().map(|e| parse_expr(e)).collect::<CliResult<Vec<_>>>()?;
    let est = compute_estimates(&sidecar.columns, &columns, &parsed, n_batches, certificate)?;
    print_json(&est)?;
    if let Some(path) = out {
        io::write_json(path, &est)?;
    }
    Ok(EXIT_CERTIFIED)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub verdict: Verdict,
    pub lemma_a1: Vec<LemmaA1Report>,
    pub expectation_bounds: Vec<ExpectationReport>,
    pub drift: Option<DriftCheckReport>,
    pub quadrature: Option<QuadratureResult>,
    pub notes: Vec<String>,
    pub all_pass: bool,
}

#[derive(Debug, Clone)]
pub struct VerifyArgs {
    pub seed: u64,
    pub points: usize,
    pub n_mc: usize,
    pub quadrature_points: Option<usize>,
}

/// Runs the oracle suite on one model. Exit 0 if every executed check passes.
pub fn cmd_verify(model: &Model, args: &AnalysisArgs, vargs: &VerifyArgs) -> CliResult<u8> {
    let report = run_check(model, args)?;
    let mut notes = Vec::new();
    if !report.proposition1.s1 {
        return Err(input_err("X is rank deficient; nothing to verify"));
    }
    let summary = summarize_design(&model.design, args.rank_tol)?;
    let root = RngStream::new(vargs.seed);
    let mut pick = root.substream(0);
    let k = report.drift.as_ref().map(|d| d.k_estimate.value);
    let mut lemma = Vec::with_capacity(vargs.points);
    let mut expect = Vec::with_capacity(vargs.points);
    for i in 0..vargs.points {
        let mut draw = || 10f64.powf(pick.random_range(-2.0..=2.0));
        let sig = Variances { e: draw(), u: (0..summary.r).map(|_| draw()).collect() };
        lemma.push(check_lemma_a1(&summary, &sig)?);
        if let Some(k) = k {
            let c = report.drift.as_ref().map_or(0.25, |d| d.c.min(0.49));
            expect.push(check_expectation_bounds(&summary, &model.design, &sig, k, c, vargs.n_mc, vargs.seed + 1 + i as u64)?);
        }
    }
    if k.is_none() {
        notes.push("no drift certificate: moment-bound and drift checks skipped".into());
    }
    let drift = match &report.drift {
        Some(cert) => Some(mc_check_drift(&summary, &model.design, &model.prior, cert, vargs.points, vargs.n_mc, vargs.seed)?),
        None => None,
    };
    let quadrature = if summary.r <= 2 && report.proposition1.all_pass() {
        let points = vargs.quadrature_points.unwrap_or(if summary.r == 1 { 201 } else { 61 });
        let spec = QuadratureSpec::default_for(&model.design, points);
        match sigma2_marginal_quadrature(&model.design, &model.prior, &spec) {
            Ok(q) => Some(q),
            Err(mixedergo::Error::GridTooCoarse { .. }) => {
                // heavy tails: widen by 8 decades each way at the same spacing
                let wide = QuadratureSpec {
                    log10_lo: spec.log10_lo.iter().map(|v| v - 8.0).collect(),
                    log10_hi: spec.log10_hi.iter().map(|v| v + 8.0).collect(),
                    points: spec.points.iter().map(|&n| n + (n - 1) * 16 / 26).collect(),
                };
                notes.push("quadrature: default range too narrow, retried on a range widened by 8 decades each way".into());
                match sigma2_marginal_quadrature(&model.design, &model.prior, &wide) {
                    Ok(q) => Some(q),
                    Err(e) => {
                        notes.push(format!("quadrature: {e}"));
                        None
                    }
                }
            }
            Err(e) => {
                notes.push(format!("quadrature: {e}"));
                None
            }
        }
    } else {
        notes.push("quadrature skipped (needs r ≤ 2 and a well-defined sampler)".into());
        None
    };
    let all_pass = lemma.iter().all(|l| l.all_hold)
        && expect.iter().all(|e| e.all_pass)
        && drift.as_ref().is_none_or(|d| d.violations == 0);
    let out = VerifyReport { verdict: report.verdict, lemma_a1: lemma, expectation_bounds: expect, drift, quadrature, notes, all_pass };
    print_json(&out)?;
    Ok(if all_pass { EXIT_CERTIFIED } else { EXIT_UNESTABLISHED })
}
