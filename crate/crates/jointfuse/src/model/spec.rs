//! Declarative description of a joint longitudinal/survival model.

use serde::{Deserialize, Serialize};

/// Reserved design column: constant 1 for every row.
pub const INTERCEPT_COLUMN: &str = "intercept";

/// Reserved design column: the observation time of the longitudinal row.
pub const TIME_COLUMN: &str = "time";

/// Conditional distribution of one longitudinal marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerFamily {
    /// Continuous marker with additive N(0, sigma^2) error.
    Gaussian,
    /// Binary marker, logit link on the linear predictor.
    Bernoulli,
    /// Count marker: hurdle at zero, zero-truncated negative binomial above.
    HurdleNegBinomial,
}

/// One longitudinal marker and its design.
///
/// Design columns are explicit names: the reserved `intercept` and `time`
/// columns plus covariate columns from the longitudinal table. The random
/// design must be a subset of the fixed design. Hurdle markers additionally
/// carry a design for the zero-probability logit, an optional offset column
/// added to the log mean, and one extra random intercept attached to the
/// zero-probability part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerSpec {
    pub name: String,
    pub family: MarkerFamily,
    /// Columns building x_i(s) for the mean linear predictor.
    pub fixed: Vec<String>,
    /// Columns building z_i(s); subset of `fixed`.
    pub random: Vec<String>,
    /// Hurdle only: column added (coefficient fixed at 1) to the log mean.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<String>,
    /// Hurdle only: columns for the zero-probability logit design.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub probability_design: Vec<String>,
}

impl MarkerSpec {
    /// Length of this marker's block in the shared random-effect vector.
    ///
    /// Hurdle markers get one extra slot: a random intercept in the
    /// zero-probability sub-model, placed after the mean-model effects.
    pub fn random_dim(&self) -> usize {
        self.random.len() + usize::from(self.family == MarkerFamily::HurdleNegBinomial)
    }
}

/// How a marker's trajectory feeds the log hazard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssociationKind {
    /// gamma * mu_i(t): one coefficient.
    CurrentValue,
    /// gamma * mu_i'(t): one coefficient.
    CurrentSlope,
    /// gamma * integral of mu_i over [0, t]: one coefficient.
    CumulativeEffect,
    /// gamma' b_i over the marker's random-effect block.
    SharedRandomEffects,
    /// gamma_1 * mu_i(t) + gamma_2 * mu_i'(t): two coefficients.
    CurrentValuePlusSlope,
}

impl AssociationKind {
    /// Number of association coefficients for a marker with `random_dim`
    /// random effects.
    pub fn coefficient_dim(self, random_dim: usize) -> usize {
        match self {
            AssociationKind::CurrentValue
            | AssociationKind::CurrentSlope
            | AssociationKind::CumulativeEffect => 1,
            AssociationKind::SharedRandomEffects => random_dim,
            AssociationKind::CurrentValuePlusSlope => 2,
        }
    }
}

/// Parametric family of the baseline hazard, one per cause.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BaselineHazardSpec {
    /// lambda_0(t) = exp(alpha_intercept): flat. The level is carried by the
    /// event design's intercept coefficient.
    Constant,
    /// lambda_0(t) = exp(alpha_intercept) * nu * t^(nu-1); the intercept
    /// doubles as the log scale.
    Weibull,
    /// Step hazard: heights h_1..h_J on intervals cut at `knots` (J-1 interior
    /// cut points, right-closed intervals, last interval open-ended). No
    /// implicit event intercept; the heights carry the level.
    PiecewiseConstant { knots: Vec<f64> },
    /// log lambda_0(t) = own intercept + B-spline expansion with a
    /// random-walk smoothness prior on the coefficients. No implicit event
    /// intercept.
    BSpline {
        degree: usize,
        interior_knots: usize,
        penalty_order: usize,
    },
}

impl BaselineHazardSpec {
    /// Whether the event design gets an implicit leading intercept column
    /// whose coefficient is the log baseline level.
    pub fn has_event_intercept(&self) -> bool {
        matches!(
            self,
            BaselineHazardSpec::Constant | BaselineHazardSpec::Weibull
        )
    }
}

/// Shape of the event outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EventStructure {
    /// One terminating event, status 0 = censored, 1 = event.
    SingleEvent,
    /// Cause-specific hazards; status 0 = censored, 1..=causes = cause index.
    CompetingRisks { causes: usize },
    /// Two latent classes: a logistic incidence sub-model decides
    /// susceptibility, only susceptible subjects can experience the event.
    MixtureCure,
}

impl EventStructure {
    pub fn n_causes(&self) -> usize {
        match self {
            EventStructure::CompetingRisks { causes } => *causes,
            _ => 1,
        }
    }
}

/// Event sub-model: structure, per-cause baselines, and covariate designs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub structure: EventStructure,
    /// One baseline per cause.
    pub baselines: Vec<BaselineHazardSpec>,
    /// Survival-table columns building w_i. An intercept is prepended
    /// implicitly when the baseline calls for one.
    #[serde(default)]
    pub covariates: Vec<String>,
    /// Mixture cure only: incidence design columns (intercept implicit).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub incidence_covariates: Vec<String>,
}

/// Mean/variance of an independent normal prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub mean: f64,
    pub variance: f64,
}

/// Shape/rate gamma prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

/// Prior settings with low-information defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSet {
    /// All regression coefficients (beta, alpha, gamma, xi, hurdle betas).
    pub coefficients: NormalPrior,
    /// Gaussian error precisions 1/sigma^2.
    pub error_precision: GammaPrior,
    /// Wishart prior on the random-effect precision matrix: rate-style scale
    /// matrix `wishart_scale * I`; degrees of freedom default to the block
    /// dimension when unset.
    pub wishart_scale: f64,
    pub wishart_dof: Option<f64>,
    /// Weibull shape parameter.
    pub weibull_shape: GammaPrior,
    /// Piecewise-constant hazard heights.
    pub hazard_heights: GammaPrior,
    /// Smoothness precision of the spline log baseline.
    pub spline_smoothing: GammaPrior,
    /// Weak ridge precision that makes the rank-deficient random-walk prior
    /// on spline coefficients proper.
    pub spline_ridge_precision: f64,
    /// Hurdle dispersion r.
    pub dispersion: GammaPrior,
}

impl Default for PriorSet {
    fn default() -> Self {
        PriorSet {
            coefficients: NormalPrior {
                mean: 0.0,
                variance: 1000.0,
            },
            error_precision: GammaPrior {
                shape: 0.01,
                rate: 0.01,
            },
            wishart_scale: 1.0,
            wishart_dof: None,
            weibull_shape: GammaPrior {
                shape: 0.01,
                rate: 0.01,
            },
            hazard_heights: GammaPrior {
                shape: 0.01,
                rate: 0.01,
            },
            spline_smoothing: GammaPrior {
                shape: 1.0,
                rate: 0.005,
            },
            spline_ridge_precision: 1e-6,
            dispersion: GammaPrior {
                shape: 0.01,
                rate: 0.01,
            },
        }
    }
}

/// Complete model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub markers: Vec<MarkerSpec>,
    /// One association per marker, shared across causes (each cause still
    /// owns its coefficients).
    pub associations: Vec<AssociationKind>,
    pub event: EventSpec,
    #[serde(default)]
    pub priors: PriorSet,
    /// Constrain the random-effect covariance to per-marker diagonal blocks
    /// instead of one full joint matrix.
    #[serde(default)]
    pub block_diagonal_re: bool,
}

impl ModelSpec {
    /// Total random-effect dimension: sum of per-marker block sizes.
    pub fn random_dim(&self) -> usize {
        self.markers.iter().map(MarkerSpec::random_dim).sum()
    }

    /// Start offset of each marker's random-effect block.
    pub fn random_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.markers.len());
        let mut acc = 0;
        for m in &self.markers {
            offsets.push(acc);
            acc += m.random_dim();
        }
        offsets
    }
}
