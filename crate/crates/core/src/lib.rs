//! Gibbs sampling and geometric-ergodicity diagnostics for Gaussian linear
//! mixed models with multiple variance components under power priors.

pub mod error;
pub mod ergodicity;
pub mod kernel;
pub mod mcmc;
mod linalg;
pub mod model;
pub mod oracle;
pub mod special;

pub use error::{Error, Result};
pub use kernel::{gibbs_step, ParamState, RngStream, Theta, Variances};
pub use model::{summarize_design, validate_model, DesignSummary, GlmmDesign, PriorSpec};
