//! Canonical parameter names and draw extraction.
//!
//! Names are 1-based: `beta[2][3]` is the third fixed effect of the second
//! marker. Single-cause models drop the cause index on event parameters.

use crate::hazard::BaselineModel;
use crate::model::{BaselineParams, MarkerFamily, ParamState, PreparedModel};

use super::SamplerError;

/// How to pull one monitored value out of a state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Extract {
    Beta(usize, usize),
    BetaPi(usize, usize),
    Sigma2(usize),
    SigmaRe(usize, usize),
    Alpha(usize, usize),
    Gamma(usize, usize, usize),
    Nu(usize),
    Height(usize, usize),
    SplineIntercept(usize),
    SplineCoef(usize, usize),
    SplineTau(usize),
    Dispersion(usize),
    Xi(usize),
    BetaCured(usize, usize),
    Sigma2Cured(usize),
    SigmaReCured(usize, usize),
    U(usize),
}

#[derive(Debug, Clone)]
pub struct MonitorEntry {
    pub name: String,
    pub(crate) extract: Extract,
    /// Population-level parameters are monitored by default; per-subject
    /// quantities (latent classes) only on request.
    pub population: bool,
}

fn entry(name: String, extract: Extract) -> MonitorEntry {
    MonitorEntry {
        name,
        extract,
        population: true,
    }
}

/// Lower-triangle index pairs of the random-effect covariance, restricted
/// to within-block entries when the model declares a block structure.
fn cov_pairs(prepared: &PreparedModel) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    if prepared.spec.block_diagonal_re {
        for m in &prepared.markers {
            for i in 0..m.random_dim {
                for j in 0..=i {
                    pairs.push((m.random_offset + i, m.random_offset + j));
                }
            }
        }
    } else {
        for i in 0..prepared.nb {
            for j in 0..=i {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Every monitorable parameter in canonical order.
pub fn name_table(prepared: &PreparedModel) -> Vec<MonitorEntry> {
    let mut out = Vec::new();
    let multi_cause = prepared.n_causes() > 1;
    let cause_tag = |l: usize| {
        if multi_cause {
            format!("[{}]", l + 1)
        } else {
            String::new()
        }
    };

    for (k, m) in prepared.markers.iter().enumerate() {
        for j in 0..m.n_fixed {
            out.push(entry(
                format!("beta[{}][{}]", k + 1, j + 1),
                Extract::Beta(k, j),
            ));
        }
    }
    for (k, m) in prepared.markers.iter().enumerate() {
        if m.family == MarkerFamily::HurdleNegBinomial {
            for j in 0..m.n_prob {
                out.push(entry(
                    format!("beta_pi[{}][{}]", k + 1, j + 1),
                    Extract::BetaPi(k, j),
                ));
            }
        }
    }
    for (k, m) in prepared.markers.iter().enumerate() {
        if m.family == MarkerFamily::Gaussian {
            out.push(entry(format!("sigma2[{}]", k + 1), Extract::Sigma2(k)));
        }
    }
    for (i, j) in cov_pairs(prepared) {
        out.push(entry(
            format!("Sigma[{}][{}]", i + 1, j + 1),
            Extract::SigmaRe(i, j),
        ));
    }

    for (l, cause) in prepared.causes.iter().enumerate() {
        for j in 0..cause.n_alpha {
            out.push(entry(
                format!("alpha{}[{}]", cause_tag(l), j + 1),
                Extract::Alpha(l, j),
            ));
        }
        for (k, m) in prepared.markers.iter().enumerate() {
            for j in 0..m.gamma_dim {
                let name = if m.gamma_dim == 1 {
                    format!("gamma{}[{}]", cause_tag(l), k + 1)
                } else {
                    format!("gamma{}[{}][{}]", cause_tag(l), k + 1, j + 1)
                };
                out.push(entry(name, Extract::Gamma(l, k, j)));
            }
        }
        match &cause.baseline {
            BaselineModel::Constant => {}
            BaselineModel::Weibull => {
                out.push(entry(format!("nu{}", cause_tag(l)), Extract::Nu(l)));
            }
            BaselineModel::Piecewise { knots } => {
                for j in 0..=knots.len() {
                    out.push(entry(
                        format!("h{}[{}]", cause_tag(l), j + 1),
                        Extract::Height(l, j),
                    ));
                }
            }
            BaselineModel::Spline { basis, .. } => {
                out.push(entry(
                    format!("spline_intercept{}", cause_tag(l)),
                    Extract::SplineIntercept(l),
                ));
                for j in 0..basis.n_basis() {
                    out.push(entry(
                        format!("spline{}[{}]", cause_tag(l), j + 1),
                        Extract::SplineCoef(l, j),
                    ));
                }
                out.push(entry(
                    format!("spline_tau{}", cause_tag(l)),
                    Extract::SplineTau(l),
                ));
            }
        }
    }

    for (k, m) in prepared.markers.iter().enumerate() {
        if m.family == MarkerFamily::HurdleNegBinomial {
            out.push(entry(format!("r[{}]", k + 1), Extract::Dispersion(k)));
        }
    }

    if prepared.is_cure() {
        let n_xi = 1 + prepared.spec.event.incidence_covariates.len();
        for j in 0..n_xi {
            out.push(entry(format!("xi[{}]", j + 1), Extract::Xi(j)));
        }
        for (k, m) in prepared.markers.iter().enumerate() {
            for j in 0..m.n_fixed {
                out.push(entry(
                    format!("beta_cured[{}][{}]", k + 1, j + 1),
                    Extract::BetaCured(k, j),
                ));
            }
        }
        for (k, m) in prepared.markers.iter().enumerate() {
            if m.family == MarkerFamily::Gaussian {
                out.push(entry(
                    format!("sigma2_cured[{}]", k + 1),
                    Extract::Sigma2Cured(k),
                ));
            }
        }
        for (i, j) in cov_pairs(prepared) {
            out.push(entry(
                format!("Sigma_cured[{}][{}]", i + 1, j + 1),
                Extract::SigmaReCured(i, j),
            ));
        }
        for i in 0..prepared.n_subjects() {
            out.push(MonitorEntry {
                name: format!("u[{}]", i + 1),
                extract: Extract::U(i),
                population: false,
            });
        }
    }
    out
}

/// Names of every population-level parameter, in canonical order.
pub fn population_parameter_names(prepared: &PreparedModel) -> Vec<String> {
    name_table(prepared)
        .into_iter()
        .filter(|e| e.population)
        .map(|e| e.name)
        .collect()
}

fn pattern_matches(pattern: &str, name: &str) -> bool {
    name == pattern
        || (name.len() > pattern.len()
            && name.starts_with(pattern)
            && name.as_bytes()[pattern.len()] == b'[')
}

/// Resolves a monitor request against the name table. Empty request: all
/// population parameters. Entries may be exact names or prefixes
/// (`beta` matches `beta[1][2]` but not `beta_pi[1][1]`).
pub(crate) fn resolve(
    prepared: &PreparedModel,
    patterns: &[String],
) -> Result<Vec<MonitorEntry>, SamplerError> {
    let table = name_table(prepared);
    if patterns.is_empty() {
        return Ok(table.into_iter().filter(|e| e.population).collect());
    }
    let mut keep = vec![false; table.len()];
    for pat in patterns {
        let mut hit = false;
        for (ix, e) in table.iter().enumerate() {
            if pattern_matches(pat, &e.name) {
                keep[ix] = true;
                hit = true;
            }
        }
        if !hit {
            return Err(SamplerError::UnknownMonitor(pat.clone()));
        }
    }
    Ok(table
        .into_iter()
        .zip(keep)
        .filter_map(|(e, k)| k.then_some(e))
        .collect())
}

pub(crate) fn extract(state: &ParamState, e: &Extract) -> f64 {
    match *e {
        Extract::Beta(k, j) => state.betas[k][j],
        Extract::BetaPi(k, j) => {
            state.hurdles[k].as_ref().expect("hurdle").probability_coefficients[j]
        }
        Extract::Sigma2(k) => state.sigma2[k],
        Extract::SigmaRe(i, j) => state.re_cov[(i, j)],
        Extract::Alpha(l, j) => state.causes[l].alpha[j],
        Extract::Gamma(l, k, j) => state.causes[l].gammas[k][j],
        Extract::Nu(l) => match &state.causes[l].baseline {
            BaselineParams::Weibull { nu } => *nu,
            _ => f64::NAN,
        },
        Extract::Height(l, j) => match &state.causes[l].baseline {
            BaselineParams::PiecewiseConstant { heights } => heights[j],
            _ => f64::NAN,
        },
        Extract::SplineIntercept(l) => match &state.causes[l].baseline {
            BaselineParams::BSpline { intercept, .. } => *intercept,
            _ => f64::NAN,
        },
        Extract::SplineCoef(l, j) => match &state.causes[l].baseline {
            BaselineParams::BSpline { coefficients, .. } => coefficients[j],
            _ => f64::NAN,
        },
        Extract::SplineTau(l) => match &state.causes[l].baseline {
            BaselineParams::BSpline { smoothing, .. } => *smoothing,
            _ => f64::NAN,
        },
        Extract::Dispersion(k) => state.hurdles[k].as_ref().expect("hurdle").dispersion,
        Extract::Xi(j) => state.cure.as_ref().expect("cure").incidence[j],
        Extract::BetaCured(k, j) => state.cure.as_ref().expect("cure").cured_betas[k][j],
        Extract::Sigma2Cured(k) => state.cure.as_ref().expect("cure").cured_sigma2[k],
        Extract::SigmaReCured(i, j) => state.cure.as_ref().expect("cure").cured_re_cov[(i, j)],
        Extract::U(i) => f64::from(state.cure.as_ref().expect("cure").classes[i]),
    }
}
