//! Hazard evaluation: baseline log hazards, marker-driven association terms,
//! and cumulative hazards (closed-form where the log relative hazard is
//! affine in time, quadrature otherwise).
//!
//! The central decomposition writes log lambda_i(t) = log lambda_0(t) + A0 +
//! A1 t whenever every association term is affine in t. Flat and piecewise
//! baselines then integrate in closed form; Weibull and spline baselines
//! integrate the decomposed form by quadrature; a cumulative-effect
//! association forces full quadrature of the general integrand.

mod closed;
mod event;
mod spline;

pub use closed::{
    cum_hazard_closed_constant, cum_hazard_closed_piecewise, piecewise_interval, A1_EPSILON,
    CUM_HAZARD_CAP,
};
pub use event::{cause_log_hazard_and_cum, log_event_density};
pub use spline::{difference_matrix, penalty_matrix, SplineBasis};

use thiserror::Error;

use crate::model::{AssociationKind, BaselineParams};
use crate::quadrature::QuadratureRule;

#[derive(Debug, Error, PartialEq)]
pub enum HazardError {
    #[error("hazard evaluation needs t > 0, got {0}")]
    NonPositiveTime(f64),
    #[error("baseline parameters do not match the baseline family")]
    BaselineMismatch,
    #[error("association `{0}` cannot be evaluated for this marker design")]
    UnsupportedDesign(&'static str),
}

/// Resolved baseline: the spec family plus whatever data-derived pieces
/// (spline basis) evaluation needs.
#[derive(Debug, Clone, PartialEq)]
pub enum BaselineModel {
    Constant,
    Weibull,
    Piecewise { knots: Vec<f64> },
    Spline { basis: SplineBasis, penalty_order: usize },
}

impl BaselineModel {
    /// Whether the event design carries the implicit leading intercept.
    pub fn has_event_intercept(&self) -> bool {
        matches!(self, BaselineModel::Constant | BaselineModel::Weibull)
    }
}

/// log lambda_0(t) for the baseline family, exclusive of the level carried
/// by the event intercept (Constant and Weibull) so that adding A0 always
/// yields the full log hazard.
pub fn baseline_log_hazard(
    model: &BaselineModel,
    params: &BaselineParams,
    t: f64,
) -> Result<f64, HazardError> {
    if t <= 0.0 {
        return Err(HazardError::NonPositiveTime(t));
    }
    match (model, params) {
        (BaselineModel::Constant, BaselineParams::Constant) => Ok(0.0),
        (BaselineModel::Weibull, BaselineParams::Weibull { nu }) => {
            Ok(nu.ln() + (nu - 1.0) * t.ln())
        }
        (BaselineModel::Piecewise { knots }, BaselineParams::PiecewiseConstant { heights }) => {
            Ok(heights[piecewise_interval(knots, t)].ln())
        }
        (
            BaselineModel::Spline { basis, .. },
            BaselineParams::BSpline {
                intercept,
                coefficients,
                ..
            },
        ) => {
            let b = basis.eval(t);
            Ok(intercept + dot(coefficients, &b))
        }
        _ => Err(HazardError::BaselineMismatch),
    }
}

/// Marker trajectory reduced to its affine form mu(t) = constant + slope t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinePredictor {
    pub constant: f64,
    pub slope: f64,
}

impl AffinePredictor {
    pub fn at(&self, t: f64) -> f64 {
        self.constant + self.slope * t
    }
}

/// Constant and time coefficient of the affine part of the log relative
/// hazard: A0 + A1 t. Defined only when every active association keeps the
/// log hazard affine in t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    pub a0: f64,
    pub a1: f64,
}

/// Contribution of one marker's association to the log hazard at time `t`.
///
/// `mu` is the marker's affine linear predictor and `b` its random-effect
/// block (used by the shared-random-effects kind).
pub fn association_log_hazard_term(
    kind: AssociationKind,
    gammas: &[f64],
    mu: &AffinePredictor,
    b: &[f64],
    t: f64,
) -> f64 {
    match kind {
        AssociationKind::CurrentValue => gammas[0] * mu.at(t),
        AssociationKind::CurrentSlope => gammas[0] * mu.slope,
        AssociationKind::CumulativeEffect => {
            gammas[0] * (mu.constant * t + 0.5 * mu.slope * t * t)
        }
        AssociationKind::SharedRandomEffects => dot(gammas, b),
        AssociationKind::CurrentValuePlusSlope => gammas[0] * mu.at(t) + gammas[1] * mu.slope,
    }
}

/// (A0, A1) contribution of one marker's association, or None when the term
/// is not affine in t (cumulative effect).
pub fn association_decomposition(
    kind: AssociationKind,
    gammas: &[f64],
    mu: &AffinePredictor,
    b: &[f64],
) -> Option<(f64, f64)> {
    match kind {
        AssociationKind::CurrentValue => Some((gammas[0] * mu.constant, gammas[0] * mu.slope)),
        AssociationKind::CurrentSlope => Some((gammas[0] * mu.slope, 0.0)),
        AssociationKind::CumulativeEffect => None,
        AssociationKind::SharedRandomEffects => Some((dot(gammas, b), 0.0)),
        AssociationKind::CurrentValuePlusSlope => Some((
            gammas[0] * mu.constant + gammas[1] * mu.slope,
            gammas[0] * mu.slope,
        )),
    }
}

/// Integrates exp(log_hazard(s)) with a rule already scaled to [0, t].
/// The result is clamped at `CUM_HAZARD_CAP`.
pub fn cum_hazard_quadrature<F: FnMut(f64) -> f64>(
    mut log_hazard: F,
    scaled_rule: &QuadratureRule,
) -> f64 {
    let mut acc = 0.0;
    for (&x, &w) in scaled_rule.nodes.iter().zip(&scaled_rule.weights) {
        let lh = log_hazard(x);
        acc += w * lh.min(705.0).exp();
        if acc >= CUM_HAZARD_CAP {
            return CUM_HAZARD_CAP;
        }
    }
    acc.min(CUM_HAZARD_CAP)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
