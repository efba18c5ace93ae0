//! Conjugate full-conditional draws used by the Gibbs steps.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, Normal};

use super::SamplerError;

/// Gamma(shape, rate) draw.
pub fn gamma_draw(rng: &mut impl Rng, shape: f64, rate: f64) -> f64 {
    debug_assert!(shape > 0.0 && rate > 0.0);
    Gamma::new(shape, 1.0 / rate).expect("valid gamma").sample(rng)
}

/// Draws a variance whose precision has the Gamma(shape, rate) full
/// conditional, i.e. an inverse-gamma variate.
pub fn precision_gibbs_draw(rng: &mut impl Rng, shape: f64, rate: f64) -> f64 {
    1.0 / gamma_draw(rng, shape, rate).max(f64::MIN_POSITIVE)
}

/// Wishart draw in the rate convention: density proportional to
/// |W|^{(dof - p - 1)/2} exp(-tr(rate W)/2), so E[W] = dof * rate^{-1}.
/// Bartlett decomposition on the Cholesky factor of rate^{-1}.
pub fn wishart_rate_draw(
    rng: &mut impl Rng,
    rate: &DMatrix<f64>,
    dof: f64,
) -> Result<DMatrix<f64>, SamplerError> {
    let p = rate.nrows();
    if dof < p as f64 {
        return Err(SamplerError::DegenerateDraw(format!(
            "Wishart dof {dof} below dimension {p}"
        )));
    }
    let scale = rate
        .clone()
        .cholesky()
        .ok_or_else(|| SamplerError::DegenerateDraw("Wishart rate not positive definite".into()))?
        .inverse();
    let ls = scale
        .cholesky()
        .ok_or_else(|| SamplerError::DegenerateDraw("Wishart scale not positive definite".into()))?
        .l();
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        a[(i, i)] = ChiSquared::new(dof - i as f64)
            .expect("valid chi-squared dof")
            .sample(rng)
            .sqrt();
        for j in 0..i {
            a[(i, j)] = std.sample(rng);
        }
    }
    let f = ls * a;
    Ok(&f * f.transpose())
}
