//! Full parameter state of a model: population parameters, per-subject
//! random effects, and latent class indicators where applicable.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Baseline-hazard parameters matching a `BaselineHazardSpec`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BaselineParams {
    /// Flat baseline; the level is the event intercept coefficient.
    Constant,
    /// Shape of the Weibull hazard (the scale is the event intercept).
    Weibull { nu: f64 },
    /// Interval heights h_1..h_J, all positive.
    PiecewiseConstant { heights: Vec<f64> },
    /// Own intercept, spline coefficients, and the smoothness precision of
    /// their random-walk prior.
    BSpline {
        intercept: f64,
        coefficients: Vec<f64>,
        smoothing: f64,
    },
}

/// Event parameters of one cause.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseParams {
    /// Event covariate coefficients; when the baseline carries an implicit
    /// intercept it sits first and doubles as the log baseline level.
    pub alpha: Vec<f64>,
    /// Association coefficients, one vector per marker.
    pub gammas: Vec<Vec<f64>>,
    pub baseline: BaselineParams,
}

/// Hurdle-specific marker parameters (the mean-model coefficients live in
/// `ParamState::betas` like any other marker's).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HurdleParams {
    /// Zero-probability logit coefficients.
    pub probability_coefficients: Vec<f64>,
    /// Negative-binomial dispersion r > 0.
    pub dispersion: f64,
}

/// Mixture-cure extras: incidence model, latent classes, and the cured
/// class's own longitudinal parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CureParams {
    /// Incidence logit coefficients, intercept first.
    pub incidence: Vec<f64>,
    /// Latent susceptibility per subject: 1 = susceptible, 0 = cured.
    pub classes: Vec<u8>,
    /// Cured-class fixed effects, per marker.
    pub cured_betas: Vec<Vec<f64>>,
    /// Cured-class error variances, per marker (Gaussian markers only).
    pub cured_sigma2: Vec<f64>,
    /// Cured-class random-effect covariance.
    pub cured_re_cov: DMatrix<f64>,
}

/// Every sampled quantity of the model in one structure.
///
/// For mixture-cure models the top-level longitudinal parameters belong to
/// the susceptible class; the cured class's live in `cure`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamState {
    /// Fixed effects per marker.
    pub betas: Vec<Vec<f64>>,
    /// Error variance per marker; meaningful for Gaussian markers, kept at
    /// 1.0 elsewhere so indices line up.
    pub sigma2: Vec<f64>,
    /// Hurdle extras per marker (None for non-hurdle markers).
    pub hurdles: Vec<Option<HurdleParams>>,
    /// Random-effect covariance D, `random_dim x random_dim`.
    pub re_cov: DMatrix<f64>,
    /// Random-effect vector per subject (empty for population-only states,
    /// e.g. simulation truths).
    pub random_effects: Vec<Vec<f64>>,
    /// Event parameters per cause.
    pub causes: Vec<CauseParams>,
    /// Mixture-cure extras.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cure: Option<CureParams>,
}

impl ParamState {
    /// The log baseline level of a constant/Weibull cause, read from the
    /// implicit intercept coefficient.
    pub fn log_level(&self, cause: usize) -> f64 {
        self.causes[cause].alpha[0]
    }
}
