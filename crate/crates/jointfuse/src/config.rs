//! Run configuration: one TOML file holding the model description, sampler
//! settings, quadrature choice, and (for simulation runs) the generating
//! scenario with its truth tables.
//!
//! The raw file shapes here are deliberately looser than the in-memory
//! types: associations sit inside their marker block, baseline defaults are
//! filled in, truth matrices are written row by row, and a constant/Weibull
//! cause may give `lambda0` instead of spelling out the log-level intercept.

use std::path::Path;

use nalgebra::DMatrix;
use serde::Deserialize;
use thiserror::Error;

use crate::model::{
    AssociationKind, BaselineHazardSpec, BaselineParams, CauseParams, CureParams, EventSpec,
    EventStructure, GammaPrior, HurdleParams, MarkerFamily, MarkerSpec, ModelSpec, NormalPrior,
    ParamState, PriorSet,
};
use crate::quadrature::{kronrod15_rule, legendre_rule, QuadratureRule};
use crate::sampler::McmcConfig;
use crate::simulate::{CovariateGenerator, SimScenario};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

/// Everything a run needs, lowered from one config file.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub spec: ModelSpec,
    pub mcmc: McmcConfig,
    pub rule: QuadratureRule,
    /// Present when the file has a `[scenario]` section.
    pub scenario: Option<SimScenario>,
}

pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let spec = lower_model(&raw.model)?;
    let rule = lower_quadrature(&raw.quadrature)?;
    let scenario = match raw.scenario {
        Some(s) => Some(lower_scenario(&spec, s)?),
        None => None,
    };
    Ok(RunConfig {
        spec,
        mcmc: raw.mcmc,
        rule,
        scenario,
    })
}

// ---- raw file shapes ----

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: RawModel,
    #[serde(default)]
    mcmc: McmcConfig,
    #[serde(default)]
    quadrature: RawQuadrature,
    scenario: Option<RawScenario>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    markers: Vec<RawMarker>,
    event: RawEvent,
    #[serde(default)]
    priors: RawPriors,
    #[serde(default)]
    block_diagonal_re: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMarker {
    name: String,
    family: MarkerFamily,
    fixed: Vec<String>,
    #[serde(default)]
    random: Vec<String>,
    association: AssociationKind,
    offset: Option<String>,
    #[serde(default)]
    probability_design: Vec<String>,
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawStructure {
    SingleEvent,
    CompetingRisks,
    MixtureCure,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    structure: RawStructure,
    /// Competing risks only: number of causes.
    causes: Option<usize>,
    /// One per cause; missing entries default to a constant baseline.
    #[serde(default)]
    baselines: Vec<RawBaseline>,
    #[serde(default)]
    covariates: Vec<String>,
    #[serde(default)]
    incidence_covariates: Vec<String>,
}

fn default_spline_degree() -> usize {
    3
}

fn default_interior_knots() -> usize {
    5
}

fn default_penalty_order() -> usize {
    2
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
enum RawBaseline {
    Constant,
    Weibull,
    PiecewiseConstant {
        knots: Vec<f64>,
    },
    BSpline {
        #[serde(default = "default_spline_degree")]
        degree: usize,
        #[serde(default = "default_interior_knots")]
        interior_knots: usize,
        #[serde(default = "default_penalty_order")]
        penalty_order: usize,
    },
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawPriors {
    coefficients: Option<NormalPrior>,
    error_precision: Option<GammaPrior>,
    wishart_scale: Option<f64>,
    wishart_dof: Option<f64>,
    weibull_shape: Option<GammaPrior>,
    hazard_heights: Option<GammaPrior>,
    spline_smoothing: Option<GammaPrior>,
    spline_ridge_precision: Option<f64>,
    dispersion: Option<GammaPrior>,
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawRule {
    Kronrod15,
    Legendre,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawQuadrature {
    rule: Option<RawRule>,
    /// Point count, Gauss-Legendre only.
    order: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    n_subjects: usize,
    grid: Vec<f64>,
    #[serde(default)]
    covariates: Vec<CovariateGenerator>,
    censoring_rate: Option<f64>,
    admin_censor_time: f64,
    t_max_factor: Option<f64>,
    truth: RawTruth,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTruth {
    markers: Vec<RawMarkerTruth>,
    /// Random-effect covariance, one row per line.
    re_cov: Vec<Vec<f64>>,
    causes: Vec<RawCauseTruth>,
    cure: Option<RawCureTruth>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMarkerTruth {
    beta: Vec<f64>,
    sigma2: Option<f64>,
    probability_coefficients: Option<Vec<f64>>,
    dispersion: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCauseTruth {
    #[serde(default)]
    alpha: Vec<f64>,
    /// Convenience for constant/Weibull baselines: the baseline level on the
    /// natural scale; its log is prepended to `alpha` as the intercept.
    lambda0: Option<f64>,
    gammas: Vec<Vec<f64>>,
    baseline: Option<RawBaselineTruth>,
}

fn default_spline_smoothing() -> f64 {
    200.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
enum RawBaselineTruth {
    Constant,
    Weibull {
        nu: f64,
    },
    PiecewiseConstant {
        heights: Vec<f64>,
    },
    BSpline {
        intercept: f64,
        coefficients: Vec<f64>,
        #[serde(default = "default_spline_smoothing")]
        smoothing: f64,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCureTruth {
    incidence: Vec<f64>,
    cured_betas: Vec<Vec<f64>>,
    #[serde(default)]
    cured_sigma2: Vec<f64>,
    cured_re_cov: Vec<Vec<f64>>,
}

// ---- lowering ----

fn lower_model(raw: &RawModel) -> Result<ModelSpec, ConfigError> {
    if raw.markers.is_empty() {
        return Err(invalid("model.markers", "at least one marker is required"));
    }
    let markers: Vec<MarkerSpec> = raw
        .markers
        .iter()
        .map(|m| MarkerSpec {
            name: m.name.clone(),
            family: m.family,
            fixed: m.fixed.clone(),
            random: m.random.clone(),
            offset: m.offset.clone(),
            probability_design: m.probability_design.clone(),
        })
        .collect();
    let associations = raw.markers.iter().map(|m| m.association).collect();

    let structure = match raw.event.structure {
        RawStructure::SingleEvent => EventStructure::SingleEvent,
        RawStructure::MixtureCure => EventStructure::MixtureCure,
        RawStructure::CompetingRisks => {
            let causes = raw.event.causes.ok_or_else(|| {
                invalid("model.event.causes", "required for competing_risks")
            })?;
            if causes < 2 {
                return Err(invalid(
                    "model.event.causes",
                    "competing risks need at least 2 causes",
                ));
            }
            EventStructure::CompetingRisks { causes }
        }
    };
    if raw.event.causes.is_some() && !matches!(structure, EventStructure::CompetingRisks { .. }) {
        return Err(invalid(
            "model.event.causes",
            "only applies to competing_risks",
        ));
    }
    let n_causes = structure.n_causes();
    let baselines: Vec<BaselineHazardSpec> = if raw.event.baselines.is_empty() {
        vec![BaselineHazardSpec::Constant; n_causes]
    } else {
        raw.event.baselines.iter().map(lower_baseline).collect()
    };
    if baselines.len() != n_causes {
        return Err(invalid(
            "model.event.baselines",
            format!("expected {} entries, got {}", n_causes, baselines.len()),
        ));
    }

    Ok(ModelSpec {
        markers,
        associations,
        event: EventSpec {
            structure,
            baselines,
            covariates: raw.event.covariates.clone(),
            incidence_covariates: raw.event.incidence_covariates.clone(),
        },
        priors: lower_priors(&raw.priors),
        block_diagonal_re: raw.block_diagonal_re,
    })
}

fn lower_baseline(raw: &RawBaseline) -> BaselineHazardSpec {
    match raw {
        RawBaseline::Constant => BaselineHazardSpec::Constant,
        RawBaseline::Weibull => BaselineHazardSpec::Weibull,
        RawBaseline::PiecewiseConstant { knots } => BaselineHazardSpec::PiecewiseConstant {
            knots: knots.clone(),
        },
        RawBaseline::BSpline {
            degree,
            interior_knots,
            penalty_order,
        } => BaselineHazardSpec::BSpline {
            degree: *degree,
            interior_knots: *interior_knots,
            penalty_order: *penalty_order,
        },
    }
}

fn lower_priors(raw: &RawPriors) -> PriorSet {
    let mut p = PriorSet::default();
    if let Some(v) = raw.coefficients {
        p.coefficients = v;
    }
    if let Some(v) = raw.error_precision {
        p.error_precision = v;
    }
    if let Some(v) = raw.wishart_scale {
        p.wishart_scale = v;
    }
    if raw.wishart_dof.is_some() {
        p.wishart_dof = raw.wishart_dof;
    }
    if let Some(v) = raw.weibull_shape {
        p.weibull_shape = v;
    }
    if let Some(v) = raw.hazard_heights {
        p.hazard_heights = v;
    }
    if let Some(v) = raw.spline_smoothing {
        p.spline_smoothing = v;
    }
    if let Some(v) = raw.spline_ridge_precision {
        p.spline_ridge_precision = v;
    }
    if let Some(v) = raw.dispersion {
        p.dispersion = v;
    }
    p
}

fn lower_quadrature(raw: &RawQuadrature) -> Result<QuadratureRule, ConfigError> {
    match raw.rule {
        None | Some(RawRule::Kronrod15) => {
            if raw.order.is_some() {
                return Err(invalid(
                    "quadrature.order",
                    "only applies to the legendre rule",
                ));
            }
            Ok(kronrod15_rule())
        }
        Some(RawRule::Legendre) => {
            let order = raw.order.unwrap_or(15);
            legendre_rule(order).map_err(|e| invalid("quadrature.order", e.to_string()))
        }
    }
}

fn lower_scenario(spec: &ModelSpec, raw: RawScenario) -> Result<SimScenario, ConfigError> {
    if raw.n_subjects == 0 {
        return Err(invalid("scenario.n_subjects", "must be at least 1"));
    }
    if raw.grid.is_empty() {
        return Err(invalid("scenario.grid", "needs at least one visit time"));
    }
    if raw.grid.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(invalid(
            "scenario.grid",
            "visit times must be finite and nonnegative",
        ));
    }
    if raw.grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid(
            "scenario.grid",
            "visit times must be strictly increasing",
        ));
    }
    if !(raw.admin_censor_time.is_finite() && raw.admin_censor_time > 0.0) {
        return Err(invalid(
            "scenario.admin_censor_time",
            "must be positive and finite",
        ));
    }
    if let Some(r) = raw.censoring_rate {
        if !(r.is_finite() && r > 0.0) {
            return Err(invalid(
                "scenario.censoring_rate",
                "must be positive and finite",
            ));
        }
    }
    if let Some(f) = raw.t_max_factor {
        if !(f.is_finite() && f >= 1.0) {
            return Err(invalid("scenario.t_max_factor", "must be at least 1"));
        }
    }
    let truth = lower_truth(spec, &raw.truth)?;
    Ok(SimScenario {
        spec: spec.clone(),
        truth,
        n_subjects: raw.n_subjects,
        grid: raw.grid,
        covariates: raw.covariates,
        censoring_rate: raw.censoring_rate,
        admin_censor_time: raw.admin_censor_time,
        t_max_factor: raw.t_max_factor.unwrap_or(100.0),
    })
}

fn lower_matrix(field: &str, rows: &[Vec<f64>], dim: usize) -> Result<DMatrix<f64>, ConfigError> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(invalid(field, format!("expected a {dim}x{dim} matrix")));
    }
    let m = DMatrix::from_fn(dim, dim, |i, j| rows[i][j]);
    for i in 0..dim {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * m[(i, i)].abs().max(1.0) {
                return Err(invalid(field, "matrix is not symmetric"));
            }
        }
    }
    if m.clone().cholesky().is_none() {
        return Err(invalid(field, "matrix is not positive definite"));
    }
    Ok(m)
}

fn lower_truth(spec: &ModelSpec, raw: &RawTruth) -> Result<ParamState, ConfigError> {
    if raw.markers.len() != spec.markers.len() {
        return Err(invalid(
            "scenario.truth.markers",
            format!(
                "expected {} entries (one per marker), got {}",
                spec.markers.len(),
                raw.markers.len()
            ),
        ));
    }
    let mut betas = Vec::new();
    let mut sigma2 = Vec::new();
    let mut hurdles = Vec::new();
    for (k, (m, t)) in spec.markers.iter().zip(&raw.markers).enumerate() {
        let field = format!("scenario.truth.markers[{}]", k + 1);
        if t.beta.len() != m.fixed.len() {
            return Err(invalid(
                format!("{field}.beta"),
                format!("expected {} coefficients, got {}", m.fixed.len(), t.beta.len()),
            ));
        }
        betas.push(t.beta.clone());
        match m.family {
            MarkerFamily::Gaussian => {
                let s2 = t.sigma2.ok_or_else(|| {
                    invalid(format!("{field}.sigma2"), "required for gaussian markers")
                })?;
                if !(s2.is_finite() && s2 > 0.0) {
                    return Err(invalid(format!("{field}.sigma2"), "must be positive"));
                }
                sigma2.push(s2);
            }
            _ => {
                if t.sigma2.is_some() {
                    return Err(invalid(
                        format!("{field}.sigma2"),
                        "only applies to gaussian markers",
                    ));
                }
                sigma2.push(1.0);
            }
        }
        if m.family == MarkerFamily::HurdleNegBinomial {
            let probability_coefficients = t.probability_coefficients.clone().ok_or_else(|| {
                invalid(
                    format!("{field}.probability_coefficients"),
                    "required for hurdle markers",
                )
            })?;
            if probability_coefficients.len() != m.probability_design.len() {
                return Err(invalid(
                    format!("{field}.probability_coefficients"),
                    format!(
                        "expected {} coefficients, got {}",
                        m.probability_design.len(),
                        probability_coefficients.len()
                    ),
                ));
            }
            let dispersion = t.dispersion.ok_or_else(|| {
                invalid(format!("{field}.dispersion"), "required for hurdle markers")
            })?;
            if !(dispersion.is_finite() && dispersion > 0.0) {
                return Err(invalid(format!("{field}.dispersion"), "must be positive"));
            }
            hurdles.push(Some(HurdleParams {
                probability_coefficients,
                dispersion,
            }));
        } else {
            if t.probability_coefficients.is_some() || t.dispersion.is_some() {
                return Err(invalid(
                    field,
                    "probability_coefficients/dispersion only apply to hurdle markers",
                ));
            }
            hurdles.push(None);
        }
    }

    let re_cov = lower_matrix("scenario.truth.re_cov", &raw.re_cov, spec.random_dim())?;

    let n_causes = spec.event.structure.n_causes();
    if raw.causes.len() != n_causes {
        return Err(invalid(
            "scenario.truth.causes",
            format!("expected {} entries, got {}", n_causes, raw.causes.len()),
        ));
    }
    let mut causes = Vec::new();
    for (l, (b, t)) in spec.event.baselines.iter().zip(&raw.causes).enumerate() {
        let field = format!("scenario.truth.causes[{}]", l + 1);
        let has_intercept = b.has_event_intercept();
        let mut alpha = t.alpha.clone();
        if let Some(level) = t.lambda0 {
            if !has_intercept {
                return Err(invalid(
                    format!("{field}.lambda0"),
                    "only applies to constant/weibull baselines",
                ));
            }
            if !(level.is_finite() && level > 0.0) {
                return Err(invalid(format!("{field}.lambda0"), "must be positive"));
            }
            alpha.insert(0, level.ln());
        }
        let want = spec.event.covariates.len() + usize::from(has_intercept);
        if alpha.len() != want {
            return Err(invalid(
                format!("{field}.alpha"),
                format!(
                    "expected {} coefficients{}, got {}",
                    want,
                    if has_intercept && t.lambda0.is_none() {
                        " (log baseline level first)"
                    } else {
                        ""
                    },
                    alpha.len()
                ),
            ));
        }
        if t.gammas.len() != spec.markers.len() {
            return Err(invalid(
                format!("{field}.gammas"),
                format!(
                    "expected {} vectors (one per marker), got {}",
                    spec.markers.len(),
                    t.gammas.len()
                ),
            ));
        }
        for (k, (m, g)) in spec.markers.iter().zip(&t.gammas).enumerate() {
            let want = spec.associations[k].coefficient_dim(m.random_dim());
            if g.len() != want {
                return Err(invalid(
                    format!("{field}.gammas[{}]", k + 1),
                    format!("expected {} coefficients, got {}", want, g.len()),
                ));
            }
        }
        let baseline = lower_baseline_truth(&field, b, t.baseline.as_ref())?;
        causes.push(CauseParams {
            alpha,
            gammas: t.gammas.clone(),
            baseline,
        });
    }

    let cure = match (&spec.event.structure, &raw.cure) {
        (EventStructure::MixtureCure, Some(c)) => {
            Some(lower_cure_truth(spec, &betas, c)?)
        }
        (EventStructure::MixtureCure, None) => {
            return Err(invalid(
                "scenario.truth.cure",
                "required for mixture_cure models",
            ));
        }
        (_, Some(_)) => {
            return Err(invalid(
                "scenario.truth.cure",
                "only applies to mixture_cure models",
            ));
        }
        (_, None) => None,
    };

    Ok(ParamState {
        betas,
        sigma2,
        hurdles,
        re_cov,
        random_effects: vec![],
        causes,
        cure,
    })
}

fn lower_baseline_truth(
    field: &str,
    spec_baseline: &BaselineHazardSpec,
    raw: Option<&RawBaselineTruth>,
) -> Result<BaselineParams, ConfigError> {
    let field = format!("{field}.baseline");
    match (spec_baseline, raw) {
        (BaselineHazardSpec::Constant, None | Some(RawBaselineTruth::Constant)) => {
            Ok(BaselineParams::Constant)
        }
        (BaselineHazardSpec::Weibull, Some(RawBaselineTruth::Weibull { nu })) => {
            if !(nu.is_finite() && *nu > 0.0) {
                return Err(invalid(format!("{field}.nu"), "must be positive"));
            }
            Ok(BaselineParams::Weibull { nu: *nu })
        }
        (
            BaselineHazardSpec::PiecewiseConstant { knots },
            Some(RawBaselineTruth::PiecewiseConstant { heights }),
        ) => {
            if heights.len() != knots.len() + 1 {
                return Err(invalid(
                    format!("{field}.heights"),
                    format!("expected {} heights, got {}", knots.len() + 1, heights.len()),
                ));
            }
            if heights.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
                return Err(invalid(format!("{field}.heights"), "must all be positive"));
            }
            Ok(BaselineParams::PiecewiseConstant {
                heights: heights.clone(),
            })
        }
        (
            BaselineHazardSpec::BSpline {
                degree,
                interior_knots,
                ..
            },
            Some(RawBaselineTruth::BSpline {
                intercept,
                coefficients,
                smoothing,
            }),
        ) => {
            let want = degree + interior_knots;
            if coefficients.len() != want {
                return Err(invalid(
                    format!("{field}.coefficients"),
                    format!("expected {} coefficients, got {}", want, coefficients.len()),
                ));
            }
            if !(smoothing.is_finite() && *smoothing > 0.0) {
                return Err(invalid(format!("{field}.smoothing"), "must be positive"));
            }
            Ok(BaselineParams::BSpline {
                intercept: *intercept,
                coefficients: coefficients.clone(),
                smoothing: *smoothing,
            })
        }
        (spec_baseline, _) => {
            let kind = match spec_baseline {
                BaselineHazardSpec::Constant => "constant",
                BaselineHazardSpec::Weibull => "weibull",
                BaselineHazardSpec::PiecewiseConstant { .. } => "piecewise_constant",
                BaselineHazardSpec::BSpline { .. } => "b_spline",
            };
            Err(invalid(
                field,
                format!("parameters must match the model's {kind} baseline"),
            ))
        }
    }
}

fn lower_cure_truth(
    spec: &ModelSpec,
    betas: &[Vec<f64>],
    raw: &RawCureTruth,
) -> Result<CureParams, ConfigError> {
    let want = spec.event.incidence_covariates.len() + 1;
    if raw.incidence.len() != want {
        return Err(invalid(
            "scenario.truth.cure.incidence",
            format!("expected {want} coefficients (intercept first), got {}", raw.incidence.len()),
        ));
    }
    if raw.cured_betas.len() != betas.len()
        || raw.cured_betas.iter().zip(betas).any(|(c, b)| c.len() != b.len())
    {
        return Err(invalid(
            "scenario.truth.cure.cured_betas",
            "must match the susceptible-class beta shapes",
        ));
    }
    let cured_sigma2 = if raw.cured_sigma2.is_empty() {
        vec![1.0; betas.len()]
    } else if raw.cured_sigma2.len() == betas.len() {
        if raw.cured_sigma2.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(invalid(
                "scenario.truth.cure.cured_sigma2",
                "must all be positive",
            ));
        }
        raw.cured_sigma2.clone()
    } else {
        return Err(invalid(
            "scenario.truth.cure.cured_sigma2",
            format!("expected {} entries, got {}", betas.len(), raw.cured_sigma2.len()),
        ));
    };
    let cured_re_cov = lower_matrix(
        "scenario.truth.cure.cured_re_cov",
        &raw.cured_re_cov,
        spec.random_dim(),
    )?;
    Ok(CureParams {
        incidence: raw.incidence.clone(),
        classes: vec![],
        cured_betas: raw.cured_betas.clone(),
        cured_sigma2,
        cured_re_cov,
    })
}
