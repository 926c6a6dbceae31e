//! Propriety and geometric-ergodicity diagnostics.

mod conditions;
mod drift;
mod special_cases;

pub use conditions::{
    check_corollary1, check_theorem1, lhs_condition_e, lhs_condition_u, necessary_prechecks, search_grid,
    search_witness_s, theorem2_search, Corollary1Verdict, Theorem1Verdict, Theorem2Verdict, DEFAULT_GRID_SIZE,
    SEARCH_EPS,
};
pub use drift::{
    default_c, drift_certificate, drift_value, estimate_k, h_norm, k_search_points, k_terms, DriftCase,
    DriftCertificate, Estimate,
};
pub use special_cases::{check_oneway, check_twoway, OnewayCheck, TwowayCheck};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{summarize_design, validate_model, GlmmDesign, PriorSpec, ValidationReport};

/// Default number of random σ² points used for the K estimate.
pub const DEFAULT_K_BUDGET: usize = 2000;

/// Known model layouts that get a closed-form cross-check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layout {
    OneWay { group_sizes: Vec<usize> },
    TwoWay { m: usize, n: usize },
}

#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    pub rank_tol: f64,
    pub grid_size: usize,
    pub k_budget: usize,
    pub c: Option<f64>,
    pub layout: Option<Layout>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            rank_tol: crate::model::DEFAULT_RANK_TOL,
            grid_size: DEFAULT_GRID_SIZE,
            k_budget: DEFAULT_K_BUDGET,
            c: None,
            layout: None,
        }
    }
}

/// Overall outcome, ordered from strongest to weakest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// A witness s exists and the drift constants were computed.
    GeometricallyErgodic,
    /// The posterior is proper but geometric ergodicity was not established.
    ProperOnly,
    /// Neither property could be established.
    Unestablished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicityReport {
    pub s_tilde: f64,
    pub proposition1: ValidationReport,
    pub t: Option<usize>,
    pub theorem1: Option<Theorem1Verdict>,
    pub corollary1: Option<Corollary1Verdict>,
    pub theorem2: Option<Theorem2Verdict>,
    pub oneway: Option<OnewayCheck>,
    pub twoway: Option<TwowayCheck>,
    pub drift: Option<DriftCertificate>,
    pub drift_note: Option<String>,
    pub verdict: Verdict,
}

impl ErgodicityReport {
    pub fn geometric(&self) -> bool {
        self.theorem2.as_ref().is_some_and(|t| t.verdict)
    }

    pub fn proper(&self) -> bool {
        self.geometric() || self.theorem1.as_ref().is_some_and(|t| t.verdict)
    }
}

/// Runs every check that applies to the model and gathers the results.
pub fn analyze(design: &GlmmDesign, prior: &PriorSpec, opts: &AnalysisOptions) -> Result<ErgodicityReport> {
    let validation = validate_model(design, prior, opts.rank_tol)?;
    let mut report = ErgodicityReport {
        s_tilde: validation.s_tilde,
        proposition1: validation.clone(),
        t: None,
        theorem1: None,
        corollary1: None,
        theorem2: None,
        oneway: None,
        twoway: None,
        drift: None,
        drift_note: None,
        verdict: Verdict::Unestablished,
    };
    if !validation.s1 {
        report.drift_note = Some("X is rank deficient; nothing further is evaluated".into());
        return Ok(report);
    }
    let summary = summarize_design(design, opts.rank_tol)?;
    report.t = Some(summary.t);
    let th1 = check_theorem1(&summary, prior);
    let cor = check_corollary1(&summary, prior);
    let mut th2 = theorem2_search(&summary, prior, opts.grid_size);
    if !validation.all_pass() {
        th2.verdict = false;
        th2.note = Some(format!("sampler not well defined: {} fail", validation.failures().join(", ")));
    }

    if th2.verdict {
        let s = th2.witness_s.expect("verdict implies a witness");
        let k = estimate_k(&summary, design, opts.k_budget)?;
        match drift_certificate(&summary, prior, s, opts.c, k.value) {
            Ok(cert) => report.drift = Some(cert),
            Err(e) => report.drift_note = Some(e.to_string()),
        }
    }

    match &opts.layout {
        Some(Layout::OneWay { group_sizes }) if prior.r() == 1 => {
            let n: usize = group_sizes.iter().sum();
            match check_oneway(group_sizes.len(), n, prior.a_e, prior.a[0], Some(group_sizes)) {
                Ok(v) => report.oneway = Some(v),
                Err(e) => log::info!("one-way closed form skipped: {e}"),
            }
        }
        Some(Layout::TwoWay { m, n }) if prior.r() == 2 => {
            let s = th2.witness_s.unwrap_or(0.9);
            match check_twoway(*m, *n, prior.a_e, prior.a[0], prior.a[1], s) {
                Ok(v) => report.twoway = Some(v),
                Err(e) => log::info!("two-way closed form skipped: {e}"),
            }
        }
        _ => {}
    }

    report.verdict = if th2.verdict && report.drift.is_some() && validation.all_pass() {
        Verdict::GeometricallyErgodic
    } else if validation.all_pass() && (th1.verdict || th2.verdict) {
        Verdict::ProperOnly
    } else {
        Verdict::Unestablished
    };
    report.theorem1 = Some(th1);
    report.corollary1 = Some(cor);
    report.theorem2 = Some(th2);
    Ok(report)
}
