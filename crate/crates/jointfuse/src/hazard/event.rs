//! Per-subject event-model evaluation: log hazard at the observed time and
//! the cumulative hazard over follow-up, combined into the event's log
//! density contribution for single-event, competing-risks, and cure
//! structures.
//!
//! Routing: when every association term is affine in time the log relative
//! hazard collapses to A0 + A1 s and flat/piecewise baselines integrate in
//! closed form (Weibull and spline baselines integrate the collapsed form
//! on the subject's cached grid). A cumulative-effect association falls
//! back to quadrature of the full integrand.

use crate::model::{
    BaselineParams, MarkerDesign, ParamState, PreparedMarker, PreparedModel, PreparedSubject,
};
use crate::stats::log1pexp;

use super::{
    association_decomposition, association_log_hazard_term, cum_hazard_closed_constant,
    cum_hazard_closed_piecewise, dot, piecewise_interval, AffinePredictor, BaselineModel,
    CUM_HAZARD_CAP,
};

/// Log-hazard values above this are clamped before exponentiation inside
/// the quadrature accumulators.
const LOG_HAZARD_EXP_CAP: f64 = 705.0;

/// Affine view of one marker's linear predictor for one subject.
fn marker_affine(meta: &PreparedMarker, d: &MarkerDesign, beta: &[f64], b: &[f64]) -> AffinePredictor {
    let mut constant = dot(beta, &d.x_const);
    let mut slope = dot(beta, &d.x_time);
    for r in 0..meta.n_random {
        constant += b[r] * d.z_const[r];
        slope += b[r] * d.z_time[r];
    }
    AffinePredictor { constant, slope }
}

/// Integrates exp(min(lh, cap)) over the subject's cached grid.
fn integrate_nodes<F: FnMut(usize, f64) -> f64>(s: &PreparedSubject, mut log_hazard: F) -> f64 {
    let mut acc = 0.0;
    for (q, (&x, &w)) in s.quad_nodes.iter().zip(&s.quad_weights).enumerate() {
        acc += w * log_hazard(q, x).min(LOG_HAZARD_EXP_CAP).exp();
        if acc >= CUM_HAZARD_CAP {
            return CUM_HAZARD_CAP;
        }
    }
    acc.min(CUM_HAZARD_CAP)
}

/// Baseline log hazard at grid node `q` (position `x`), using the cached
/// spline bases and log node positions.
fn baseline_at_node(
    baseline: &BaselineModel,
    params: &BaselineParams,
    s: &PreparedSubject,
    cause: usize,
    q: usize,
    x: f64,
) -> f64 {
    match (baseline, params) {
        (BaselineModel::Constant, BaselineParams::Constant) => 0.0,
        (BaselineModel::Weibull, BaselineParams::Weibull { nu }) => {
            nu.ln() + (nu - 1.0) * s.quad_log_nodes[q]
        }
        (BaselineModel::Piecewise { knots }, BaselineParams::PiecewiseConstant { heights }) => {
            heights[piecewise_interval(knots, x)].ln()
        }
        (
            BaselineModel::Spline { basis, .. },
            BaselineParams::BSpline {
                intercept,
                coefficients,
                ..
            },
        ) => {
            let l = basis.n_basis();
            intercept + dot(coefficients, &s.spline_at_nodes[cause][q * l..(q + 1) * l])
        }
        _ => unreachable!("baseline family/parameter mismatch"),
    }
}

/// Baseline log hazard at the subject's event time.
fn baseline_at_event(
    baseline: &BaselineModel,
    params: &BaselineParams,
    s: &PreparedSubject,
    cause: usize,
) -> f64 {
    match (baseline, params) {
        (BaselineModel::Constant, BaselineParams::Constant) => 0.0,
        (BaselineModel::Weibull, BaselineParams::Weibull { nu }) => {
            nu.ln() + (nu - 1.0) * s.event_time.ln()
        }
        (BaselineModel::Piecewise { knots }, BaselineParams::PiecewiseConstant { heights }) => {
            heights[piecewise_interval(knots, s.event_time)].ln()
        }
        (
            BaselineModel::Spline { .. },
            BaselineParams::BSpline {
                intercept,
                coefficients,
                ..
            },
        ) => intercept + dot(coefficients, &s.spline_at_event[cause]),
        _ => unreachable!("baseline family/parameter mismatch"),
    }
}

/// Log hazard at the subject's event time and cumulative hazard over
/// [0, event_time] for one cause, under the current parameter state.
pub fn cause_log_hazard_and_cum(
    prepared: &PreparedModel,
    state: &ParamState,
    i: usize,
    cause: usize,
) -> (f64, f64) {
    let s = &prepared.subjects[i];
    let cp = &prepared.causes[cause];
    let params = &state.causes[cause];
    let t = s.event_time;
    let a0_cov = dot(&params.alpha, &s.w[cause]);
    let b_full = &state.random_effects[i];

    // Try the affine collapse first.
    let mut a0 = a0_cov;
    let mut a1 = 0.0;
    let mut affine = true;
    let mut mus: Vec<AffinePredictor> = Vec::with_capacity(prepared.markers.len());
    for (k, meta) in prepared.markers.iter().enumerate() {
        let b = prepared.re_block(b_full, k);
        let mu = marker_affine(meta, &s.markers[k], &state.betas[k], b);
        mus.push(mu);
        match association_decomposition(meta.association, &params.gammas[k], &mu, b) {
            Some((c0, c1)) => {
                a0 += c0;
                a1 += c1;
            }
            None => affine = false,
        }
    }

    if affine {
        let log_haz = baseline_at_event(&cp.baseline, &params.baseline, s, cause) + a0 + a1 * t;
        let cum = match (&cp.baseline, &params.baseline) {
            (BaselineModel::Constant, BaselineParams::Constant) => {
                cum_hazard_closed_constant(a0, a1, 1.0, t)
            }
            (BaselineModel::Piecewise { knots }, BaselineParams::PiecewiseConstant { heights }) => {
                cum_hazard_closed_piecewise(a0, a1, heights, knots, t)
            }
            _ => integrate_nodes(s, |q, x| {
                baseline_at_node(&cp.baseline, &params.baseline, s, cause, q, x) + a0 + a1 * x
            }),
        };
        return (log_haz, cum);
    }

    // General route: some association term is non-affine in time.
    let assoc_at = |t_eval: f64| -> f64 {
        let mut g = 0.0;
        for (k, meta) in prepared.markers.iter().enumerate() {
            g += association_log_hazard_term(
                meta.association,
                &params.gammas[k],
                &mus[k],
                prepared.re_block(b_full, k),
                t_eval,
            );
        }
        g
    };
    let log_haz = baseline_at_event(&cp.baseline, &params.baseline, s, cause) + a0_cov + assoc_at(t);
    let cum = integrate_nodes(s, |q, x| {
        baseline_at_node(&cp.baseline, &params.baseline, s, cause, q, x) + a0_cov + assoc_at(x)
    });
    (log_haz, cum)
}

/// Event-model log density for subject `i`: hazard and survival terms for
/// the subject's outcome, plus the incidence factor under the cure
/// structure. Longitudinal and random-effect terms are elsewhere.
pub fn log_event_density(prepared: &PreparedModel, state: &ParamState, i: usize) -> f64 {
    let s = &prepared.subjects[i];
    if let Some(cure) = &state.cure {
        let eta = dot(&cure.incidence, &s.w_incidence);
        if cure.classes[i] == 0 {
            // Cured: no event model at all, just the incidence factor.
            return -log1pexp(eta);
        }
        let (log_haz, cum) = cause_log_hazard_and_cum(prepared, state, i, 0);
        let mut ld = -log1pexp(-eta) - cum;
        if s.status == 1 {
            ld += log_haz;
        }
        return ld;
    }
    let mut ld = 0.0;
    for cause in 0..prepared.n_causes() {
        let (log_haz, cum) = cause_log_hazard_and_cum(prepared, state, i, cause);
        ld -= cum;
        if s.status == cause + 1 {
            ld += log_haz;
        }
    }
    ld
}
