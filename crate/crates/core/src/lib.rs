//! Bayesian longitudinal linear mixed models for panel landings data.
//!
//! Two models are provided: a random-intercept, random-slope model for total
//! log landings, and a shared-parameter joint model for the industrial and
//! artisanal sectors whose country effects are correlated across sectors.
//! Both are fitted with a seeded Metropolis-within-Gibbs sampler.

pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod dist;
pub mod error;
pub mod model;
pub mod oracle;
pub mod sampler;

pub use error::{Error, Result};
pub use model::{Dataset, ModelKind, ModelState, Params, Sector};
