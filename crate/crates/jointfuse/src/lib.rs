//! Joint models for longitudinal markers and time-to-event outcomes,
//! fitted by adaptive Metropolis-within-Gibbs MCMC.
//!
//! The crate covers model description and validation, likelihood
//! evaluation with closed-form cumulative hazards where the structure
//! allows, dataset simulation, posterior sampling, convergence
//! diagnostics, and the `jointfuse` command-line front end.

pub mod config;
pub mod diagnostics;
pub mod hazard;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod quadrature;
pub mod sampler;
pub mod simulate;
pub mod stats;
