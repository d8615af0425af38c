//! Density deconvolution by penalized maximum likelihood.
//!
//! Observations `y = x + e` are contaminated by additive error with a known
//! distribution or a pure-error sample. The latent density `f` is estimated
//! by maximising the log-likelihood of the convolved density minus
//! `λ ∫ f''²`, with `f''` expanded in a finite basis built from the integrated
//! error CDF.

pub mod basis;
pub mod distributions;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod pipeline;
pub mod quadrature;
pub mod rng;
pub mod solver;
pub mod theory;

pub use basis::{BasisSet, CoefficientVector, GramMatrix};
pub use distributions::{ErrorFamily, ErrorModel, TrueDistribution};
pub use error::{PmleError, Result};
pub use evaluation::{emit_table, ise, run_scenario, Scenario, ScenarioResult};
pub use pipeline::{fit, DensityEstimate, FitConfig, LambdaMode};
pub use solver::{nelder_mead, solve, Objective, SimplexOptions};



