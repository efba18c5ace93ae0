//! Log likelihoods and densities: observation models per marker family,
//! the random-effect density, the joint prior, and the full log posterior.
//!
//! Out-of-support states (nonpositive variances, shapes, heights, a
//! non-positive-definite covariance) evaluate to negative infinity so a
//! Metropolis step rejects them instead of propagating NaN.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::hazard::{log_event_density, BaselineModel};
use crate::model::{
    BaselineParams, MarkerFamily, ParamState, PreparedCause, PreparedModel,
};
use crate::stats::{log1mexp, log1pexp, logsumexp};

pub(crate) use crate::hazard::dot;

const LN_2PI: f64 = 1.8378770664093453;

/// Normal density with mean and variance.
pub fn normal_logpdf(x: f64, mean: f64, variance: f64) -> f64 {
    if variance <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let d = x - mean;
    -0.5 * (LN_2PI + variance.ln() + d * d / variance)
}

/// Gamma density in shape/rate form.
pub fn gamma_logpdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 || shape <= 0.0 || rate <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Multivariate log gamma function.
pub fn ln_multigamma(p: usize, a: f64) -> f64 {
    let mut acc = 0.25 * (p * (p - 1)) as f64 * std::f64::consts::PI.ln();
    for j in 1..=p {
        acc += ln_gamma(a + 0.5 * (1.0 - j as f64));
    }
    acc
}

/// Wishart density in rate form: `omega` has scale `rate.inverse()` in the
/// classical parameterization, so E[omega] = dof * rate^-1.
pub fn wishart_rate_logpdf(omega: &DMatrix<f64>, rate: &DMatrix<f64>, dof: f64) -> f64 {
    let p = omega.nrows();
    if p == 0 {
        return 0.0;
    }
    if dof < p as f64 {
        return f64::NEG_INFINITY;
    }
    let Some(chol_o) = omega.clone().cholesky() else {
        return f64::NEG_INFINITY;
    };
    let Some(chol_r) = rate.clone().cholesky() else {
        return f64::NEG_INFINITY;
    };
    let logdet_o = 2.0 * chol_o.l_dirty().diagonal().map(f64::ln).sum();
    let logdet_r = 2.0 * chol_r.l_dirty().diagonal().map(f64::ln).sum();
    let trace = (rate * omega).trace();
    0.5 * (dof - p as f64 - 1.0) * logdet_o - 0.5 * trace + 0.5 * dof * logdet_r
        - 0.5 * dof * p as f64 * std::f64::consts::LN_2
        - ln_multigamma(p, 0.5 * dof)
}

/// Zero-mean multivariate normal density; negative infinity when `cov` is
/// not positive definite. An empty vector evaluates to 0.
pub fn mvn_zero_logpdf(b: &[f64], cov: &DMatrix<f64>) -> f64 {
    let n = b.len();
    if n == 0 {
        return 0.0;
    }
    let Some(chol) = cov.clone().cholesky() else {
        return f64::NEG_INFINITY;
    };
    let logdet = 2.0 * chol.l_dirty().diagonal().map(f64::ln).sum();
    let v = chol.solve(&DVector::from_column_slice(b));
    let quad: f64 = b.iter().zip(v.iter()).map(|(x, y)| x * y).sum();
    -0.5 * (n as f64 * LN_2PI + logdet + quad)
}

/// One Gaussian observation.
pub fn gaussian_obs_loglik(y: f64, mu: f64, sigma2: f64) -> f64 {
    normal_logpdf(y, mu, sigma2)
}

/// One Bernoulli observation on the logit scale.
pub fn bernoulli_obs_loglik(y: f64, logit_p: f64) -> f64 {
    if y == 1.0 {
        -log1pexp(-logit_p)
    } else {
        -log1pexp(logit_p)
    }
}

/// One hurdle negative-binomial count. Zeros carry probability
/// `logistic(logit_pi)`; positive counts follow a zero-truncated negative
/// binomial with mean `exp(log_eta)` and dispersion `r`.
pub fn hurdle_obs_loglik(y: f64, log_eta: f64, logit_pi: f64, r: f64) -> f64 {
    if r <= 0.0 || !r.is_finite() {
        return f64::NEG_INFINITY;
    }
    if y == 0.0 {
        return -log1pexp(-logit_pi);
    }
    let log_r_plus_eta = logsumexp(&[r.ln(), log_eta]);
    let log_kappa = r.ln() - log_r_plus_eta;
    let log_1mkappa = log_eta - log_r_plus_eta;
    // 1 - kappa^r is the probability the untruncated count is positive.
    let log_trunc = log1mexp(r * log_kappa);
    -log1pexp(logit_pi) + ln_gamma(r + y) - ln_gamma(r) - ln_gamma(y + 1.0)
        + r * log_kappa
        + y * log_1mkappa
        - log_trunc
}

/// All observations of marker `k` for subject `i` under the current state
/// (class-specific coefficients under the cure structure).
pub fn subject_marker_loglik(
    prepared: &PreparedModel,
    state: &ParamState,
    i: usize,
    k: usize,
) -> f64 {
    let meta = &prepared.markers[k];
    let d = &prepared.subjects[i].markers[k];
    let class = state.cure.as_ref().map_or(1, |c| c.classes[i]);
    let (beta, sigma2): (&[f64], f64) = if class == 0 {
        let cure = state.cure.as_ref().unwrap();
        (&cure.cured_betas[k], cure.cured_sigma2[k])
    } else {
        (&state.betas[k], state.sigma2[k])
    };
    let block = prepared.re_block(&state.random_effects[i], k);
    let p = meta.n_fixed;
    let q = meta.n_random;
    let mut ll = 0.0;
    match meta.family {
        MarkerFamily::Gaussian => {
            if sigma2 <= 0.0 {
                return f64::NEG_INFINITY;
            }
            for rix in 0..d.n_obs() {
                let mu = dot(beta, &d.x[rix * p..(rix + 1) * p])
                    + dot(&block[..q], &d.z[rix * q..(rix + 1) * q]);
                ll += gaussian_obs_loglik(d.values[rix], mu, sigma2);
            }
        }
        MarkerFamily::Bernoulli => {
            for rix in 0..d.n_obs() {
                let lin = dot(beta, &d.x[rix * p..(rix + 1) * p])
                    + dot(&block[..q], &d.z[rix * q..(rix + 1) * q]);
                ll += bernoulli_obs_loglik(d.values[rix], lin);
            }
        }
        MarkerFamily::HurdleNegBinomial => {
            let h = state.hurdles[k].as_ref().expect("hurdle parameters");
            let np = meta.n_prob;
            let b_prob = block[q];
            for rix in 0..d.n_obs() {
                let mut log_eta = dot(beta, &d.x[rix * p..(rix + 1) * p])
                    + dot(&block[..q], &d.z[rix * q..(rix + 1) * q]);
                if !d.log_offset.is_empty() {
                    log_eta += d.log_offset[rix];
                }
                let logit_pi = dot(
                    &h.probability_coefficients,
                    &d.xp[rix * np..(rix + 1) * np],
                ) + b_prob;
                ll += hurdle_obs_loglik(d.values[rix], log_eta, logit_pi, h.dispersion);
            }
        }
    }
    ll
}

/// Random-effect density of subject `i` under its class covariance.
pub fn subject_re_loglik(prepared: &PreparedModel, state: &ParamState, i: usize) -> f64 {
    if prepared.nb == 0 {
        return 0.0;
    }
    let class = state.cure.as_ref().map_or(1, |c| c.classes[i]);
    let cov = if class == 0 {
        &state.cure.as_ref().unwrap().cured_re_cov
    } else {
        &state.re_cov
    };
    mvn_zero_logpdf(&state.random_effects[i], cov)
}

/// Smoothness prior for spline baseline coefficients: a random walk of the
/// given order with precision `tau` (rank-deficient, stated through the
/// penalty's pseudo-determinant) plus a fixed small ridge that makes the
/// whole density proper.
pub fn spline_coef_log_prior(
    coefficients: &[f64],
    cause: &PreparedCause,
    tau: f64,
    ridge_precision: f64,
) -> f64 {
    if tau <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let psi = cause.penalty.as_ref().expect("spline penalty");
    let alpha = DVector::from_column_slice(coefficients);
    let quad = (alpha.transpose() * psi * &alpha)[(0, 0)];
    let l = coefficients.len() as f64;
    let rank = cause.penalty_rank as f64;
    let ssq: f64 = coefficients.iter().map(|a| a * a).sum();
    0.5 * rank * (tau.ln() - LN_2PI) + 0.5 * cause.penalty_pseudo_logdet - 0.5 * tau * quad
        + 0.5 * l * (ridge_precision.ln() - LN_2PI)
        - 0.5 * ridge_precision * ssq
}

fn coefficient_block_prior(values: &[f64], mean: f64, variance: f64) -> f64 {
    values.iter().map(|&v| normal_logpdf(v, mean, variance)).sum()
}

/// Prior on one random-effect covariance: rate-form Wishart on its inverse
/// plus the Jacobian of the inversion. Applied per marker block when the
/// model declares a block-diagonal structure.
fn re_cov_log_prior(prepared: &PreparedModel, cov: &DMatrix<f64>) -> f64 {
    let nb = prepared.nb;
    if nb == 0 {
        return 0.0;
    }
    let priors = &prepared.spec.priors;
    let block_prior = |block: DMatrix<f64>| -> f64 {
        let p = block.nrows();
        let Some(chol) = block.clone().cholesky() else {
            return f64::NEG_INFINITY;
        };
        let logdet = 2.0 * chol.l_dirty().diagonal().map(f64::ln).sum();
        let omega = chol.inverse();
        let dof = priors.wishart_dof.unwrap_or(p as f64);
        let rate = DMatrix::identity(p, p) * priors.wishart_scale;
        wishart_rate_logpdf(&omega, &rate, dof) - (p as f64 + 1.0) * logdet
    };
    if prepared.spec.block_diagonal_re {
        let mut acc = 0.0;
        for m in &prepared.markers {
            let d = m.random_dim;
            if d == 0 {
                continue;
            }
            let block = cov.view((m.random_offset, m.random_offset), (d, d)).into_owned();
            acc += block_prior(block);
        }
        acc
    } else {
        block_prior(cov.clone())
    }
}

/// Joint log prior over every population-level parameter in `state`.
pub fn log_prior(prepared: &PreparedModel, state: &ParamState) -> f64 {
    let priors = &prepared.spec.priors;
    let cm = priors.coefficients.mean;
    let cv = priors.coefficients.variance;
    let mut lp = 0.0;

    for (k, meta) in prepared.markers.iter().enumerate() {
        lp += coefficient_block_prior(&state.betas[k], cm, cv);
        if meta.family == MarkerFamily::Gaussian {
            let s2 = state.sigma2[k];
            if s2 <= 0.0 {
                return f64::NEG_INFINITY;
            }
            // Gamma prior on the precision, restated on the variance scale.
            lp += gamma_logpdf(1.0 / s2, priors.error_precision.shape, priors.error_precision.rate)
                - 2.0 * s2.ln();
        }
        if let Some(h) = &state.hurdles[k] {
            lp += coefficient_block_prior(&h.probability_coefficients, cm, cv);
            lp += gamma_logpdf(h.dispersion, priors.dispersion.shape, priors.dispersion.rate);
        }
    }

    lp += re_cov_log_prior(prepared, &state.re_cov);

    for (l, cause) in prepared.causes.iter().enumerate() {
        let params = &state.causes[l];
        lp += coefficient_block_prior(&params.alpha, cm, cv);
        for g in &params.gammas {
            lp += coefficient_block_prior(g, cm, cv);
        }
        match (&cause.baseline, &params.baseline) {
            (BaselineModel::Constant, BaselineParams::Constant) => {}
            (BaselineModel::Weibull, BaselineParams::Weibull { nu }) => {
                lp += gamma_logpdf(*nu, priors.weibull_shape.shape, priors.weibull_shape.rate);
            }
            (BaselineModel::Piecewise { .. }, BaselineParams::PiecewiseConstant { heights }) => {
                for &h in heights {
                    lp += gamma_logpdf(h, priors.hazard_heights.shape, priors.hazard_heights.rate);
                }
            }
            (
                BaselineModel::Spline { .. },
                BaselineParams::BSpline {
                    intercept,
                    coefficients,
                    smoothing,
                },
            ) => {
                lp += normal_logpdf(*intercept, cm, cv);
                lp += spline_coef_log_prior(
                    coefficients,
                    cause,
                    *smoothing,
                    priors.spline_ridge_precision,
                );
                lp += gamma_logpdf(
                    *smoothing,
                    priors.spline_smoothing.shape,
                    priors.spline_smoothing.rate,
                );
            }
            _ => return f64::NEG_INFINITY,
        }
    }

    if let Some(cure) = &state.cure {
        lp += coefficient_block_prior(&cure.incidence, cm, cv);
        for betas in &cure.cured_betas {
            lp += coefficient_block_prior(betas, cm, cv);
        }
        for &s2 in &cure.cured_sigma2 {
            if s2 <= 0.0 {
                return f64::NEG_INFINITY;
            }
            lp += gamma_logpdf(1.0 / s2, priors.error_precision.shape, priors.error_precision.rate)
                - 2.0 * s2.ln();
        }
        lp += re_cov_log_prior(prepared, &cure.cured_re_cov);
    }

    lp
}

/// Full log posterior (up to the marginal-likelihood constant): priors,
/// random-effect densities, longitudinal observations, event terms.
pub fn log_posterior(prepared: &PreparedModel, state: &ParamState) -> f64 {
    let mut lp = log_prior(prepared, state);
    if lp == f64::NEG_INFINITY {
        return lp;
    }
    for i in 0..prepared.n_subjects() {
        lp += subject_re_loglik(prepared, state, i);
        for k in 0..prepared.n_markers() {
            lp += subject_marker_loglik(prepared, state, i, k);
        }
        lp += log_event_density(prepared, state, i);
    }
    if lp.is_nan() {
        f64::NEG_INFINITY
    } else {
        lp
    }
}
