//! Dataset simulation from a model specification and a generating
//! parameter state: covariate draws, random effects, marker observations on
//! a visit grid, and event times by inverting the cumulative hazard.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hazard::{
    association_decomposition, association_log_hazard_term, cum_hazard_closed_piecewise, dot,
    piecewise_interval, AffinePredictor,
};
use crate::model::{
    BaselineHazardSpec, BaselineParams, Dataset, EventStructure, MarkerFamily, MarkerSeries,
    MarkerSpec, ModelSpec, ParamState, SubjectData, INTERCEPT_COLUMN, TIME_COLUMN,
};
use crate::quadrature::{legendre_rule, scale_to_interval, QuadratureRule};
use crate::stats::{log1mexp, log1pexp, logsumexp};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario invalid: {0}")]
    BadScenario(String),
    #[error("event-time inversion failed to converge: {0}")]
    ConvergenceFailure(String),
}

/// Subject-level covariate generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateKind {
    Bernoulli { p: f64 },
    Normal { mean: f64, sd: f64 },
    Constant { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateGenerator {
    pub name: String,
    #[serde(flatten)]
    pub kind: CovariateKind,
}

/// Everything needed to simulate one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub spec: ModelSpec,
    /// Generating population parameters (random effects are drawn fresh).
    pub truth: ParamState,
    pub n_subjects: usize,
    /// Scheduled visit times; rows past the event time are dropped.
    pub grid: Vec<f64>,
    /// Covariates are drawn once per subject and serve both tables.
    pub covariates: Vec<CovariateGenerator>,
    /// Exponential censoring rate (None: administrative only).
    pub censoring_rate: Option<f64>,
    pub admin_censor_time: f64,
    /// Root search gives up at this multiple of the administrative cutoff.
    #[serde(default = "default_t_max_factor")]
    pub t_max_factor: f64,
}

fn default_t_max_factor() -> f64 {
    100.0
}

/// Outcome of inverting the cumulative hazard against one uniform draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Inversion {
    Event(f64),
    /// The cumulative hazard never reaches the exponential draw by the
    /// stated horizon.
    Censored(f64),
}

impl Inversion {
    pub fn time_or(self, fallback: f64) -> f64 {
        match self {
            Inversion::Event(t) => t,
            Inversion::Censored(_) => fallback,
        }
    }
}

/// Inverts Lambda(t) = lambda0 exp(A0) (exp(A1 t) - 1) / A1 at the uniform
/// draw `u`. When A1 < 0 the cumulative hazard saturates, so large draws
/// never produce an event.
pub fn invert_constant_baseline(u: f64, a0: f64, a1: f64, lambda0: f64) -> Inversion {
    debug_assert!(u > 0.0 && u <= 1.0);
    let scale = lambda0 * a0.exp();
    // t0 is the time under a flat relative hazard; the slope enters only
    // through x = A1 t0. Forming x directly (instead of 1 + x) and using
    // ln_1p keeps the round trip through the closed cumulative hazard at
    // float noise even when x is tiny.
    let t0 = -u.ln() / scale;
    let x = a1 * t0;
    if x <= -1.0 {
        // The cumulative hazard plateaus below the draw.
        return Inversion::Censored(f64::INFINITY);
    }
    if x == 0.0 {
        return Inversion::Event(t0);
    }
    Inversion::Event(x.ln_1p() / a1)
}

/// Inverts an arbitrary nondecreasing cumulative hazard by bracketing and
/// Brent root refinement; `Censored(t_max)` when the hazard never
/// accumulates enough mass by `t_max`.
pub fn invert_by_root_finding(
    u: f64,
    mut cum_hazard: impl FnMut(f64) -> f64,
    t_max: f64,
) -> Result<Inversion, SimError> {
    let target = -u.ln();
    if cum_hazard(t_max) < target {
        return Ok(Inversion::Censored(t_max));
    }
    // Bracket by doubling.
    let mut lo = 0.0;
    let mut flo = -target;
    let mut hi = (t_max / 1024.0).max(1e-6);
    loop {
        let fhi = cum_hazard(hi) - target;
        if fhi >= 0.0 {
            return brent(|t| cum_hazard(t) - target, lo, flo, hi, fhi)
                .map(Inversion::Event);
        }
        lo = hi;
        flo = fhi;
        hi = (hi * 2.0).min(t_max);
        if lo >= t_max {
            return Ok(Inversion::Censored(t_max));
        }
    }
}

/// Brent's method on a bracketed root; f(a) and f(b) must have opposite
/// signs (or be zero).
fn brent(
    mut f: impl FnMut(f64) -> f64,
    mut a: f64,
    mut fa: f64,
    mut b: f64,
    mut fb: f64,
) -> Result<f64, SimError> {
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(SimError::ConvergenceFailure(format!(
            "root not bracketed: f({a}) = {fa}, f({b}) = {fb}"
        )));
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.abs() > fc.abs() {
            (a, b, c) = (b, c, b);
            (fa, fb, fc) = (fb, fc, fb);
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 1e-13;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb.abs() <= 1e-10 {
            return Ok(b);
        }
        if e.abs() < tol || fa.abs() <= fb.abs() {
            d = m;
            e = m;
        } else {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        }
        (a, fa) = (b, fb);
        b += if d.abs() > tol { d } else { tol * m.signum() };
        fb = f(b);
        if (fb > 0.0) == (fc > 0.0) {
            (c, fc) = (a, fa);
            d = b - a;
            e = d;
        }
    }
    Err(SimError::ConvergenceFailure(
        "Brent iteration limit reached".into(),
    ))
}

/// Draws one hurdle count: zero with probability `logistic(logit_pi)`,
/// otherwise a zero-truncated negative binomial sampled by walking its pmf.
pub fn sample_hurdle_count(
    rng: &mut impl rand::Rng,
    log_eta: f64,
    logit_pi: f64,
    r: f64,
) -> Result<u64, SimError> {
    if rng.random::<f64>() < 1.0 / (1.0 + (-logit_pi).exp()) {
        return Ok(0);
    }
    let log_r_plus_eta = logsumexp(&[r.ln(), log_eta]);
    let log_kappa = r.ln() - log_r_plus_eta;
    let one_minus_kappa = (log_eta - log_r_plus_eta).exp();
    // p(1 | y > 0), then the standard pmf ratio recursion.
    let mut p = (r.ln() + r * log_kappa + (log_eta - log_r_plus_eta)
        - log1mexp(r * log_kappa))
    .exp();
    let mut u = rng.random::<f64>();
    let mut y: u64 = 1;
    loop {
        if u <= p || y >= 1_000_000 {
            return Ok(y);
        }
        u -= p;
        p *= (y as f64 + r) / (y as f64 + 1.0) * one_minus_kappa;
        y += 1;
    }
}

enum SCol {
    Intercept,
    Time,
    Cov(usize),
}

fn resolve_scols(names: &[String], cov_names: &[String]) -> Result<Vec<SCol>, SimError> {
    names
        .iter()
        .map(|n| {
            if n == INTERCEPT_COLUMN {
                Ok(SCol::Intercept)
            } else if n == TIME_COLUMN {
                Ok(SCol::Time)
            } else {
                cov_names
                    .iter()
                    .position(|c| c == n)
                    .map(SCol::Cov)
                    .ok_or_else(|| {
                        SimError::BadScenario(format!("no covariate generator for column `{n}`"))
                    })
            }
        })
        .collect()
}

fn scol_value(col: &SCol, t: f64, cov: &[f64]) -> f64 {
    match col {
        SCol::Intercept => 1.0,
        SCol::Time => t,
        SCol::Cov(i) => cov[*i],
    }
}

/// Affine trajectory of marker `k` for a subject with covariates `cov` and
/// random-effect block `b` (mean-model part only).
fn affine_of(
    fixed: &[SCol],
    random: &[SCol],
    beta: &[f64],
    b: &[f64],
    cov: &[f64],
) -> AffinePredictor {
    let mut constant = 0.0;
    let mut slope = 0.0;
    for (j, c) in fixed.iter().enumerate() {
        match c {
            SCol::Time => slope += beta[j],
            _ => constant += beta[j] * scol_value(c, 0.0, cov),
        }
    }
    for (j, c) in random.iter().enumerate() {
        match c {
            SCol::Time => slope += b[j],
            _ => constant += b[j] * scol_value(c, 0.0, cov),
        }
    }
    AffinePredictor { constant, slope }
}

struct MarkerSim {
    fixed: Vec<SCol>,
    random: Vec<SCol>,
    prob: Vec<SCol>,
    offset: Option<SCol>,
}

struct Simulator<'a> {
    scenario: &'a SimScenario,
    markers: Vec<MarkerSim>,
    event_cov: Vec<usize>,
    incidence_cov: Vec<usize>,
    baselines: Vec<BaselineResolved>,
    rule: QuadratureRule,
}

enum BaselineResolved {
    Constant,
    Weibull,
    Piecewise { knots: Vec<f64> },
    Spline { basis: crate::hazard::SplineBasis },
}

impl Simulator<'_> {
    /// log lambda_0(t) exclusive of the level carried by the implicit event
    /// intercept (matching how the event design is laid out).
    fn baseline_lh(&self, cause: usize, params: &BaselineParams, t: f64) -> f64 {
        match (&self.baselines[cause], params) {
            (BaselineResolved::Constant, BaselineParams::Constant) => 0.0,
            (BaselineResolved::Weibull, BaselineParams::Weibull { nu }) => {
                nu.ln() + (nu - 1.0) * t.ln()
            }
            (BaselineResolved::Piecewise { knots }, BaselineParams::PiecewiseConstant { heights }) => {
                heights[piecewise_interval(knots, t)].ln()
            }
            (BaselineResolved::Spline { basis }, BaselineParams::BSpline { intercept, coefficients, .. }) => {
                intercept + dot(coefficients, &basis.eval(t))
            }
            _ => f64::NAN,
        }
    }

    /// Latent event time for one cause by inverting the cumulative hazard.
    fn latent_time(
        &self,
        cause: usize,
        u: f64,
        cov: &[f64],
        b_full: &[f64],
        mus: &[AffinePredictor],
    ) -> Result<Inversion, SimError> {
        let spec = &self.scenario.spec;
        let truth = &self.scenario.truth;
        let params = &truth.causes[cause];
        let mut a0 = 0.0;
        let mut idx = 0;
        if spec.event.baselines[cause].has_event_intercept() {
            a0 += params.alpha[0];
            idx = 1;
        }
        for (j, &ci) in self.event_cov.iter().enumerate() {
            a0 += params.alpha[idx + j] * cov[ci];
        }
        let a0_cov = a0;
        let mut a1 = 0.0;
        let mut affine = true;
        let offsets = spec.random_offsets();
        for (k, m) in spec.markers.iter().enumerate() {
            let block = &b_full[offsets[k]..offsets[k] + m.random_dim()];
            match association_decomposition(
                spec.associations[k],
                &params.gammas[k],
                &mus[k],
                block,
            ) {
                Some((c0, c1)) => {
                    a0 += c0;
                    a1 += c1;
                }
                None => affine = false,
            }
        }
        let t_max = self.scenario.admin_censor_time * self.scenario.t_max_factor;
        if affine {
            match (&self.baselines[cause], &params.baseline) {
                (BaselineResolved::Constant, BaselineParams::Constant) => {
                    return Ok(invert_constant_baseline(u, a0, a1, 1.0));
                }
                (
                    BaselineResolved::Piecewise { knots },
                    BaselineParams::PiecewiseConstant { heights },
                ) => {
                    return invert_by_root_finding(
                        u,
                        |t| cum_hazard_closed_piecewise(a0, a1, heights, knots, t),
                        t_max,
                    );
                }
                _ => {
                    return invert_by_root_finding(
                        u,
                        |t| self.integrate_hazard(cause, &params.baseline, t, |s| a0 + a1 * s),
                        t_max,
                    );
                }
            }
        }
        // Non-affine association term: integrate the full log hazard.
        let assoc = |t: f64| -> f64 {
            let mut g = a0_cov;
            for (k, m) in spec.markers.iter().enumerate() {
                let block = &b_full[offsets[k]..offsets[k] + m.random_dim()];
                g += association_log_hazard_term(
                    spec.associations[k],
                    &params.gammas[k],
                    &mus[k],
                    block,
                    t,
                );
            }
            g
        };
        invert_by_root_finding(
            u,
            |t| self.integrate_hazard(cause, &params.baseline, t, assoc),
            t_max,
        )
    }

    fn integrate_hazard(
        &self,
        cause: usize,
        params: &BaselineParams,
        t: f64,
        log_rel: impl Fn(f64) -> f64,
    ) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let scaled = scale_to_interval(&self.rule, 0.0, t).expect("valid interval");
        let mut acc = 0.0;
        for (&x, &w) in scaled.nodes.iter().zip(&scaled.weights) {
            acc += w * (self.baseline_lh(cause, params, x) + log_rel(x)).min(705.0).exp();
        }
        acc
    }
}

fn draw_covariates(gens: &[CovariateGenerator], rng: &mut ChaCha12Rng) -> Vec<f64> {
    gens.iter()
        .map(|g| match g.kind {
            CovariateKind::Bernoulli { p } => f64::from(rng.random::<f64>() < p),
            CovariateKind::Normal { mean, sd } => {
                Normal::new(mean, sd).unwrap().sample(rng)
            }
            CovariateKind::Constant { value } => value,
        })
        .collect()
}

fn draw_mvn(chol: &nalgebra::DMatrix<f64>, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let n = chol.nrows();
    let std = Normal::new(0.0, 1.0).unwrap();
    let eps: Vec<f64> = (0..n).map(|_| std.sample(rng)).collect();
    let mut out = vec![0.0; n];
    for i in 0..n {
        for (j, &e) in eps.iter().enumerate().take(i + 1) {
            out[i] += chol[(i, j)] * e;
        }
    }
    out
}

fn marker_value(
    m: &MarkerSpec,
    sim: &MarkerSim,
    beta: &[f64],
    sigma2: f64,
    hurdle: Option<&crate::model::HurdleParams>,
    block: &[f64],
    cov: &[f64],
    t: f64,
    rng: &mut ChaCha12Rng,
) -> Result<f64, SimError> {
    let mut lin = 0.0;
    for (j, c) in sim.fixed.iter().enumerate() {
        lin += beta[j] * scol_value(c, t, cov);
    }
    for (j, c) in sim.random.iter().enumerate() {
        lin += block[j] * scol_value(c, t, cov);
    }
    match m.family {
        MarkerFamily::Gaussian => {
            Ok(lin + Normal::new(0.0, sigma2.sqrt()).unwrap().sample(rng))
        }
        MarkerFamily::Bernoulli => Ok(f64::from(rng.random::<f64>() < 1.0 / (1.0 + (-lin).exp()))),
        MarkerFamily::HurdleNegBinomial => {
            let h = hurdle.expect("hurdle parameters");
            let mut log_eta = lin;
            if let Some(off) = &sim.offset {
                let v = scol_value(off, t, cov);
                if !(v > 0.0) {
                    return Err(SimError::BadScenario(format!(
                        "offset column for `{}` must be positive, got {v}",
                        m.name
                    )));
                }
                log_eta += v.ln();
            }
            let b_prob = block[m.random.len()];
            let mut logit_pi = b_prob;
            for (j, c) in sim.prob.iter().enumerate() {
                logit_pi += h.probability_coefficients[j] * scol_value(c, t, cov);
            }
            sample_hurdle_count(rng, log_eta, logit_pi, h.dispersion).map(|y| y as f64)
        }
    }
}

/// Simulates a dataset. Returns the data and a copy of the generating
/// state with the drawn random effects (and cure classes) filled in.
pub fn simulate_dataset(
    scenario: &SimScenario,
    seed: u64,
) -> Result<(Dataset, ParamState), SimError> {
    let spec = &scenario.spec;
    let truth = &scenario.truth;
    if scenario.n_subjects == 0 {
        return Err(SimError::BadScenario("n_subjects must be positive".into()));
    }
    if !(scenario.admin_censor_time > 0.0) {
        return Err(SimError::BadScenario(
            "admin_censor_time must be positive".into(),
        ));
    }
    let cov_names: Vec<String> = scenario.covariates.iter().map(|g| g.name.clone()).collect();
    let markers: Vec<MarkerSim> = spec
        .markers
        .iter()
        .map(|m| {
            Ok(MarkerSim {
                fixed: resolve_scols(&m.fixed, &cov_names)?,
                random: resolve_scols(&m.random, &cov_names)?,
                prob: resolve_scols(&m.probability_design, &cov_names)?,
                offset: m
                    .offset
                    .as_ref()
                    .map(|o| Ok(resolve_scols(std::slice::from_ref(o), &cov_names)?.remove(0)))
                    .transpose()?,
            })
        })
        .collect::<Result<_, SimError>>()?;
    let find_cov = |name: &String| {
        cov_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| SimError::BadScenario(format!("no covariate generator for `{name}`")))
    };
    let event_cov: Vec<usize> = spec.event.covariates.iter().map(find_cov).collect::<Result<_, _>>()?;
    let incidence_cov: Vec<usize> = spec
        .event
        .incidence_covariates
        .iter()
        .map(find_cov)
        .collect::<Result<_, _>>()?;
    let baselines: Vec<BaselineResolved> = spec
        .event
        .baselines
        .iter()
        .map(|b| match b {
            BaselineHazardSpec::Constant => BaselineResolved::Constant,
            BaselineHazardSpec::Weibull => BaselineResolved::Weibull,
            BaselineHazardSpec::PiecewiseConstant { knots } => BaselineResolved::Piecewise {
                knots: knots.clone(),
            },
            BaselineHazardSpec::BSpline {
                degree,
                interior_knots,
                ..
            } => {
                // No event times exist yet: spread interior knots evenly
                // over the administrative window.
                let interior: Vec<f64> = (1..=*interior_knots)
                    .map(|i| {
                        scenario.admin_censor_time * i as f64 / (*interior_knots + 1) as f64
                    })
                    .collect();
                BaselineResolved::Spline {
                    basis: crate::hazard::SplineBasis::from_knots(
                        *degree,
                        0.0,
                        scenario.admin_censor_time,
                        &interior,
                    ),
                }
            }
        })
        .collect();
    let sim = Simulator {
        scenario,
        markers,
        event_cov,
        incidence_cov,
        baselines,
        rule: legendre_rule(40).unwrap(),
    };

    let nb = spec.random_dim();
    let chol = truth
        .re_cov
        .clone()
        .cholesky()
        .ok_or_else(|| SimError::BadScenario("re_cov is not positive definite".into()))?;
    let chol_l = chol.l();
    let cured_chol_l = match &truth.cure {
        Some(c) => Some(
            c.cured_re_cov
                .clone()
                .cholesky()
                .ok_or_else(|| {
                    SimError::BadScenario("cured_re_cov is not positive definite".into())
                })?
                .l(),
        ),
        None => None,
    };
    let offsets = spec.random_offsets();
    let is_cure = spec.event.structure == EventStructure::MixtureCure;
    let n_causes = spec.event.structure.n_causes();

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut subjects = Vec::with_capacity(scenario.n_subjects);
    let mut all_b = Vec::with_capacity(scenario.n_subjects);
    let mut all_classes = Vec::with_capacity(scenario.n_subjects);
    for i in 0..scenario.n_subjects {
        let cov = draw_covariates(&scenario.covariates, &mut rng);
        // Cure class first: it decides which parameters generate everything
        // else for this subject.
        let class: u8 = if is_cure {
            let cure = truth.cure.as_ref().ok_or_else(|| {
                SimError::BadScenario("cure structure needs truth.cure parameters".into())
            })?;
            let mut eta = cure.incidence[0];
            for (j, &ci) in sim.incidence_cov.iter().enumerate() {
                eta += cure.incidence[j + 1] * cov[ci];
            }
            u8::from(rng.random::<f64>() < (-log1pexp(-eta)).exp())
        } else {
            1
        };
        let (betas, sigma2): (&Vec<Vec<f64>>, &Vec<f64>) = if class == 0 {
            let c = truth.cure.as_ref().unwrap();
            (&c.cured_betas, &c.cured_sigma2)
        } else {
            (&truth.betas, &truth.sigma2)
        };
        let b_full = if nb == 0 {
            vec![]
        } else if class == 0 {
            draw_mvn(cured_chol_l.as_ref().unwrap(), &mut rng)
        } else {
            draw_mvn(&chol_l, &mut rng)
        };

        // Latent event time (susceptible subjects only).
        let mut event_time = f64::INFINITY;
        let mut status = 0usize;
        if class == 1 {
            let mus: Vec<AffinePredictor> = spec
                .markers
                .iter()
                .enumerate()
                .map(|(k, _)| {
                    affine_of(
                        &sim.markers[k].fixed,
                        &sim.markers[k].random,
                        &betas[k],
                        &b_full[offsets[k]..],
                        &cov,
                    )
                })
                .collect();
            for cause in 0..n_causes {
                let u = rng.random::<f64>();
                let t = sim
                    .latent_time(cause, u, &cov, &b_full, &mus)?
                    .time_or(f64::INFINITY);
                if t < event_time {
                    event_time = t;
                    status = cause + 1;
                }
            }
        }
        let mut censor = scenario.admin_censor_time;
        if let Some(rate) = scenario.censoring_rate {
            censor = censor.min(Exp::new(rate).unwrap().sample(&mut rng));
        }
        if censor < event_time {
            event_time = censor;
            status = 0;
        }

        let mut rows = Vec::new();
        for &t in &scenario.grid {
            if t > event_time {
                continue;
            }
            let mut values = Vec::with_capacity(spec.markers.len());
            for (k, m) in spec.markers.iter().enumerate() {
                let block = &b_full[offsets[k]..offsets[k] + m.random_dim()];
                values.push(Some(marker_value(
                    m,
                    &sim.markers[k],
                    &betas[k],
                    sigma2[k],
                    truth.hurdles[k].as_ref(),
                    block,
                    &cov,
                    t,
                    &mut rng,
                )?));
            }
            rows.push(MarkerSeries {
                time: t,
                covariates: cov.clone(),
                values,
            });
        }
        subjects.push(SubjectData {
            id: format!("{}", i + 1),
            event_time,
            status,
            covariates: cov,
            rows,
        });
        all_b.push(b_full);
        all_classes.push(class);
    }

    let data = Dataset::new(
        spec.markers.iter().map(|m| m.name.clone()).collect(),
        cov_names.clone(),
        cov_names,
        subjects,
    );
    let mut truth_out = truth.clone();
    truth_out.random_effects = all_b;
    if let Some(c) = &mut truth_out.cure {
        c.classes = all_classes;
    }
    Ok((data, truth_out))
}
