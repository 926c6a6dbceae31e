//! `mixedergo`: check, sample and summarize Gibbs chains for linear mixed
//! models under power priors.
//!
//! Exit codes: 0 certified (or success), 2 input error, 3 proper but not
//! certified, 4 propriety not established.

mod commands;
mod demo;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mixedergo::mcmc::ChainConfig;

use commands::{AnalysisArgs, VerifyArgs, EXIT_INPUT};
use demo::{DemoArgs, DemoName};

#[derive(Parser)]
#[command(name = "mixedergo", version, about = "Gibbs sampling and geometric-ergodicity checks for linear mixed models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelOpts {
    /// Design manifest (JSON naming y, x and z_blocks CSV files)
    #[arg(long)]
    design: PathBuf,
    /// Prior file (JSON with a_e, b_e, a, b)
    #[arg(long)]
    prior: PathBuf,
}

#[derive(Args)]
struct CheckOpts {
    /// Points in the witness grid over s
    #[arg(long, default_value_t = mixedergo::ergodicity::DEFAULT_GRID_SIZE, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..=10_000_000))]
    grid_size: usize,
    /// Random σ² points used to estimate K
    #[arg(long, default_value_t = mixedergo::ergodicity::DEFAULT_K_BUDGET)]
    k_budget: usize,
    /// Exponent c of the negative-power drift terms (default chosen from the prior)
    #[arg(long)]
    c: Option<f64>,
    /// Relative rank tolerance
    #[arg(long, default_value_t = mixedergo::model::DEFAULT_RANK_TOL)]
    rank_tol: f64,
}

impl CheckOpts {
    fn args(&self) -> AnalysisArgs {
        AnalysisArgs { grid_size: self.grid_size, k_budget: self.k_budget, c: self.c, rank_tol: self.rank_tol }
    }
}

#[derive(Args)]
struct ChainOpts {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    burn_in: usize,
    /// Retained draws
    #[arg(long, default_value_t = 10_000, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..))]
    samples: usize,
    #[arg(long, default_value_t = 1, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..))]
    thin: usize,
}

impl ChainOpts {
    fn config(&self) -> ChainConfig {
        ChainConfig { burn_in: self.burn_in, n_samples: self.samples, thin: self.thin, seed: self.seed }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Well-definedness conditions only
    Validate {
        #[command(flatten)]
        model: ModelOpts,
        #[arg(long, default_value_t = mixedergo::model::DEFAULT_RANK_TOL)]
        rank_tol: f64,
    },
    /// Propriety and geometric-ergodicity report
    Check {
        #[command(flatten)]
        model: ModelOpts,
        #[command(flatten)]
        check: CheckOpts,
        /// Also write report.json into this directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the Gibbs sampler and write draws, column names and run metadata
    Sample {
        #[command(flatten)]
        model: ModelOpts,
        #[command(flatten)]
        check: CheckOpts,
        #[command(flatten)]
        chain: ChainOpts,
        #[arg(long)]
        out: PathBuf,
        /// Sample even when propriety is not established
        #[arg(long)]
        force: bool,
    },
    /// Posterior means and batch-means standard errors from a draws file
    Analyze {
        /// draws.csv written by `sample`; the sidecar draws.columns.json must sit next to it
        #[arg(long)]
        draws: PathBuf,
        /// Number of batches (default ⌊√n⌋)
        #[arg(long)]
        batches: Option<usize>,
        /// Extra functional, e.g. icc=sigma2_u_1/(sigma2_u_1+sigma2_e); repeatable
        #[arg(long = "expr")]
        exprs: Vec<String>,
        /// Also write the estimates to this file
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a built-in example and run check, sample and analyze on it
    Demo {
        #[arg(value_enum)]
        name: DemoName,
        #[arg(long)]
        out: Option<PathBuf>,
        /// One-way: number of groups
        #[arg(long, default_value_t = 3)]
        groups: usize,
        /// One-way: total sample size (default 3 per group)
        #[arg(long)]
        n_total: Option<usize>,
        /// Two-way: levels of the first factor
        #[arg(long, default_value_t = 5)]
        m: usize,
        /// Two-way: levels of the second factor
        #[arg(long, default_value_t = 6)]
        n: usize,
        #[command(flatten)]
        check: CheckOpts,
        #[arg(long, default_value_t = demo::DEMO_SEED)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        burn_in: usize,
        #[arg(long, default_value_t = 20_000, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..))]
        samples: usize,
    },
    /// Numerical checks of the drift inequality and the bounds behind it
    Verify {
        #[command(flatten)]
        model: ModelOpts,
        #[command(flatten)]
        check: CheckOpts,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random σ² points per check
        #[arg(long, default_value_t = 20)]
        points: usize,
        /// Monte Carlo draws per point
        #[arg(long, default_value_t = 10_000)]
        mc: usize,
        /// Quadrature points per dimension, r ≤ 2 only (default 201 for r = 1, 61 for r = 2)
        #[arg(long)]
        quadrature_points: Option<usize>,
    },
}

fn run(cli: Cli) -> io::CliResult<u8> {
    match cli.command {
        Command::Validate { model, rank_tol } => {
            let m = commands::load_model(&model.design, &model.prior)?;
            commands::cmd_validate(&m, rank_tol)
        }
        Command::Check { model, check, out } => {
            let m = commands::load_model(&model.design, &model.prior)?;
            commands::cmd_check(&m, &check.args(), out.as_deref())
        }
        Command::Sample { model, check, chain, out, force } => {
            let m = commands::load_model(&model.design, &model.prior)?;
            commands::cmd_sample(&m, &check.args(), &chain.config(), &out, force)
        }
        Command::Analyze { draws, batches, exprs, out } => commands::cmd_analyze(&draws, batches, &exprs, out.as_deref()),
        Command::Demo { name, out, groups, n_total, m, n, check, seed, burn_in, samples } => {
            let out = out.unwrap_or_else(|| PathBuf::from(format!("demo-{}", if name == DemoName::Oneway { "oneway" } else { "twoway" })));
            let chain = ChainConfig { burn_in, n_samples: samples, thin: 1, seed };
            demo::cmd_demo(&DemoArgs { name, out, groups, n_total, m, n, chain }, &check.args())
        }
        Command::Verify { model, check, seed, points, mc, quadrature_points } => {
            let m = commands::load_model(&model.design, &model.prior)?;
            commands::cmd_verify(&m, &check.args(), &VerifyArgs { seed, points, n_mc: mc, quadrature_points })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MIXEDERGO_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}
