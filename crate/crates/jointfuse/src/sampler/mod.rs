//! Adaptive Metropolis-within-Gibbs sampler.
//!
//! Each chain sweeps a fixed set of update blocks: random effects subject
//! by subject, regression coefficient vectors, conjugate Gibbs draws for
//! the error variances, the random-effect covariance, and the spline
//! smoothing precision, joint (alpha, gamma) event blocks, baseline
//! parameters, and latent cure classes. Proposal scales follow a
//! Robbins-Monro recursion toward standard acceptance targets during
//! burn-in and stay fixed afterwards. Every (chain, block) pair owns its
//! own ChaCha stream, so runs are reproducible for a given seed and chain
//! count regardless of thread scheduling.

mod chain;
mod conjugate;
mod monitor;

pub use chain::cure_susceptible_log_odds;
pub use conjugate::{gamma_draw, precision_gibbs_draw, wishart_rate_draw};
pub use monitor::{name_table, population_parameter_names, MonitorEntry};

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::PreparedModel;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    BadConfig(String),
    #[error("unknown monitor entry `{0}`")]
    UnknownMonitor(String),
    #[error("log posterior is not finite at the initial state")]
    NonFiniteLogPosterior,
    #[error("chain {chain} diverged at iteration {iteration}: log posterior became non-finite")]
    ChainDiverged { chain: usize, iteration: usize },
    #[error("conjugate draw degenerated: {0}")]
    DegenerateDraw(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub chains: usize,
    pub iterations: usize,
    pub burnin: usize,
    /// Keep every `thin`-th post-burn-in draw.
    pub thin: usize,
    pub seed: u64,
    /// Iterations per Robbins-Monro adaptation window.
    pub adapt_window: usize,
    /// Acceptance target for one-dimensional blocks.
    pub target_scalar: f64,
    /// Acceptance target for multivariate blocks.
    pub target_vector: f64,
    /// Parameter names or bracket-aware prefixes to record; empty means
    /// every population-level parameter.
    pub monitor: Vec<String>,
    /// Worker thread cap; defaults to the JOINTFUSE_THREADS environment
    /// variable, then the machine's parallelism.
    pub max_threads: Option<usize>,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            chains: 3,
            iterations: 20_000,
            burnin: 10_000,
            thin: 10,
            seed: 1,
            adapt_window: 50,
            target_scalar: 0.44,
            target_vector: 0.234,
            monitor: Vec::new(),
            max_threads: None,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.chains == 0 {
            return Err(SamplerError::BadConfig("chains must be positive".into()));
        }
        if self.iterations == 0 {
            return Err(SamplerError::BadConfig("iterations must be positive".into()));
        }
        if self.burnin >= self.iterations {
            return Err(SamplerError::BadConfig(format!(
                "burnin {} must be below iterations {}",
                self.burnin, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(SamplerError::BadConfig("thin must be positive".into()));
        }
        if self.adapt_window == 0 {
            return Err(SamplerError::BadConfig(
                "adapt_window must be positive".into(),
            ));
        }
        for (label, t) in [
            ("target_scalar", self.target_scalar),
            ("target_vector", self.target_vector),
        ] {
            if !(t > 0.0 && t < 1.0) {
                return Err(SamplerError::BadConfig(format!(
                    "{label} must lie strictly between 0 and 1, got {t}"
                )));
            }
        }
        Ok(())
    }
}

/// Post-burn-in acceptance rate and frozen proposal scale of one
/// Metropolis block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub label: String,
    pub acceptance: f64,
    pub scale: f64,
}

/// Retained draws of one chain, row-major over monitored parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub chain: usize,
    pub names: Vec<String>,
    pub draws: Vec<f64>,
    pub n_retained: usize,
    pub blocks: Vec<BlockStats>,
    pub seed: u64,
    pub elapsed_ms: u64,
}

impl ChainOutput {
    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let p = self.n_params();
        &self.draws[r * p..(r + 1) * p]
    }

    /// All retained draws of one named parameter.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let ix = self.names.iter().position(|n| n == name)?;
        let p = self.n_params();
        Some((0..self.n_retained).map(|r| self.draws[r * p + ix]).collect())
    }
}

fn effective_threads(cfg: &McmcConfig) -> usize {
    let env_cap = std::env::var("JOINTFUSE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0);
    cfg.max_threads
        .or(env_cap)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
        .clamp(1, cfg.chains)
}

/// Runs every chain and returns them in chain order. Chains are spread
/// over worker threads; each is deterministic in (seed, chain index).
pub fn run(prepared: &PreparedModel, cfg: &McmcConfig) -> Result<Vec<ChainOutput>, SamplerError> {
    cfg.validate()?;
    let monitors = monitor::resolve(prepared, &cfg.monitor)?;
    let threads = effective_threads(cfg);
    let mut slots: Vec<Option<Result<ChainOutput, SamplerError>>> =
        (0..cfg.chains).map(|_| None).collect();
    if threads <= 1 {
        for (c, slot) in slots.iter_mut().enumerate() {
            *slot = Some(chain::run_chain(prepared, cfg, c, &monitors));
        }
    } else {
        let next = AtomicUsize::new(0);
        let shared = Mutex::new(&mut slots);
        std::thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(|| loop {
                    let c = next.fetch_add(1, Ordering::Relaxed);
                    if c >= cfg.chains {
                        break;
                    }
                    let out = chain::run_chain(prepared, cfg, c, &monitors);
                    shared.lock().expect("result lock")[c] = Some(out);
                });
            }
        });
    }
    slots
        .into_iter()
        .map(|s| s.expect("every chain slot filled"))
        .collect()
}
