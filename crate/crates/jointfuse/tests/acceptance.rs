//! Acceptance suite: one test per numbered criterion, zero-padded so the
//! report reads in order. Each test ends by printing a single
//! `criterion N: PASS/SKIP (...)` line (visible with --nocapture); the test
//! outcome itself is the pass/fail signal in the default report.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use jointfuse::config;
use jointfuse::diagnostics::{gelman_rubin, summarize, ParameterSummary};
use jointfuse::hazard::{cum_hazard_closed_constant, cum_hazard_closed_piecewise};
use jointfuse::likelihood::hurdle_obs_loglik;
use jointfuse::model::{initial_state, prepare, Dataset, MarkerSeries, SubjectData};
use jointfuse::quadrature::{integrate, kronrod15_rule, legendre_rule};
use jointfuse::sampler::{self, cure_susceptible_log_odds, ChainOutput};
use jointfuse::simulate::{
    invert_by_root_finding, invert_constant_baseline, simulate_dataset, Inversion,
};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

fn find<'a>(summaries: &'a [ParameterSummary], name: &str) -> &'a ParameterSummary {
    summaries
        .iter()
        .find(|s| s.name == name)
        .unwrap_or_else(|| panic!("no summary row named {name}"))
}

#[test]
fn criterion_01_fixed_rules_integrate_exponentials_to_1e8() {
    let rules = [kronrod15_rule(), legendre_rule(15).unwrap()];
    let mut rng = ChaCha12Rng::seed_from_u64(401);
    let started = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let t: f64 = rng.random_range(0.05..2.5);
        // Keep |a t| <= 5 so the analytic reference stays well scaled.
        let bound = 5.0 / t;
        let a = rng.random_range(-bound..bound);
        let exact = if a.abs() < 1e-12 {
            t
        } else {
            (a * t).exp_m1() / a
        };
        for rule in &rules {
            let got = integrate(|s| (a * s).exp(), 0.0, t, rule).unwrap();
            let rel = ((got - exact) / exact).abs();
            worst = worst.max(rel);
            assert!(rel <= 1e-8, "a = {a}, t = {t}: {got} vs {exact} ({rel:e})");
        }
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 1.0, "took {secs:.3} s");
    println!("criterion 1: PASS (200 integrals, worst relative error {worst:.2e}, {secs:.3} s)");
}

#[test]
fn criterion_02_closed_form_cumulative_hazards_match_quadrature() {
    let rule = kronrod15_rule();
    let knots = [0.4, 0.9, 1.4, 1.9];
    let mut rng = ChaCha12Rng::seed_from_u64(402);
    let started = Instant::now();
    let mut worst = 0.0f64;
    for draw in 0..1_000 {
        let a0 = rng.random_range(-2.0..2.0);
        // Every fifth slope is tiny, straddling the series-expansion
        // switchover inside the closed forms.
        let a1 = if draw % 5 == 0 {
            rng.random_range(-1e-6..1e-6)
        } else {
            rng.random_range(-2.0..2.0)
        };
        let t = rng.random_range(0.05..2.5);

        let lambda0 = rng.random_range(0.1..3.0);
        let closed = cum_hazard_closed_constant(a0, a1, lambda0, t);
        let quad = integrate(|s| lambda0 * (a0 + a1 * s).exp(), 0.0, t, &rule).unwrap();
        let rel = ((closed - quad) / quad).abs();
        worst = worst.max(rel);
        assert!(
            rel <= 1e-6,
            "constant: a0 = {a0}, a1 = {a1}, t = {t}: {closed} vs {quad}"
        );

        let heights: Vec<f64> = (0..5).map(|_| rng.random_range(0.2..2.5)).collect();
        let closed = cum_hazard_closed_piecewise(a0, a1, &heights, &knots, t);
        // The step integrand breaks a single panel's accuracy, so integrate
        // segment by segment.
        let mut quad = 0.0;
        let mut lo = 0.0;
        for (j, &h) in heights.iter().enumerate() {
            let hi = if j < knots.len() { knots[j].min(t) } else { t };
            if hi <= lo {
                break;
            }
            quad += integrate(|s| h * (a0 + a1 * s).exp(), lo, hi, &rule).unwrap();
            lo = hi;
        }
        let rel = ((closed - quad) / quad).abs();
        worst = worst.max(rel);
        assert!(
            rel <= 1e-6,
            "piecewise: a0 = {a0}, a1 = {a1}, t = {t}: {closed} vs {quad}"
        );
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 5.0, "took {secs:.3} s");
    println!("criterion 2: PASS (2000 comparisons, worst relative error {worst:.2e}, {secs:.3} s)");
}

#[test]
fn criterion_03_survival_time_inverters_hit_their_targets() {
    const T_MAX: f64 = 1e9;
    let mut rng = ChaCha12Rng::seed_from_u64(403);
    let (mut events, mut censored, mut compared) = (0usize, 0usize, 0usize);
    for draw in 0..1_000 {
        let u = rng.random_range(1e-6..1.0);
        let a0 = rng.random_range(-1.0..1.0);
        let lambda0 = rng.random_range(0.2..2.0);
        let a1 = match draw % 4 {
            // Saturating hazards: the cumulative hazard plateaus, so some
            // draws censor and the rest land on a flattening curve.
            0 => rng.random_range(-2.0..-0.4),
            // Straddle the small-slope branch of the closed inverse.
            1 => rng.random_range(-1e-7..1e-7),
            _ => rng.random_range(-0.8..0.8),
        };
        let cum = |t: f64| cum_hazard_closed_constant(a0, a1, lambda0, t);
        let closed = invert_constant_baseline(u, a0, a1, lambda0);
        let brent = invert_by_root_finding(u, cum, T_MAX).unwrap();
        match (closed, brent) {
            (Inversion::Event(tc), Inversion::Event(tb)) => {
                events += 1;
                assert!(
                    (cum(tc) + u.ln()).abs() <= 1e-8,
                    "closed residual at draw {draw}: t = {tc}"
                );
                assert!(
                    (cum(tb) + u.ln()).abs() <= 1e-8,
                    "brent residual at draw {draw}: t = {tb}"
                );
                // A residual bound pins the time only where the hazard is
                // bounded away from zero; skip the flat saturating tails.
                if lambda0 * (a0 + a1 * tc).exp() >= 0.1 {
                    compared += 1;
                    assert!(
                        (tc - tb).abs() <= 1e-8 * tc.max(1.0),
                        "times disagree at draw {draw}: {tc} vs {tb}"
                    );
                }
            }
            (Inversion::Censored(_), Inversion::Censored(_)) => censored += 1,
            (c, b) => panic!("inverters disagree at draw {draw}: {c:?} vs {b:?}"),
        }
    }
    // Make sure the draw ranges actually exercised all three outcomes.
    assert!(
        events >= 550 && censored >= 20 && compared >= 400,
        "thin coverage: {events} events, {censored} censored, {compared} compared"
    );
    println!(
        "criterion 3: PASS ({events} events, {censored} censored agreements, {compared} time comparisons)"
    );
}

#[test]
fn criterion_04_hurdle_pmf_sums_to_one() {
    let mut rng = ChaCha12Rng::seed_from_u64(404);
    let mut params = vec![(1.0f64, -0.5f64, 0.265f64)];
    for _ in 0..19 {
        params.push((
            rng.random_range(-1.0..3.0),
            rng.random_range(-2.5..2.5),
            rng.random_range(0.15..5.0),
        ));
    }
    let mut worst = 0.0f64;
    for &(log_eta, logit_pi, r) in &params {
        let total: f64 = (0..=5_000)
            .map(|y| hurdle_obs_loglik(y as f64, log_eta, logit_pi, r).exp())
            .sum();
        let err = (total - 1.0).abs();
        worst = worst.max(err);
        assert!(
            err <= 1e-8,
            "log_eta = {log_eta}, logit_pi = {logit_pi}, r = {r}: sum = {total}"
        );
    }
    println!("criterion 4: PASS (20 parameter sets, worst |sum - 1| = {worst:.2e})");
}

/// One Gaussian marker linked through its current value, constant baseline,
/// sized like the simulation-study design the sampler should recover.
const RECOVERY: &str = r#"
[[model.markers]]
name = "y"
family = "gaussian"
fixed = ["intercept", "time", "x1", "x2"]
random = ["intercept", "time"]
association = "current_value"

[model.event]
structure = "single_event"
covariates = ["w1", "w2"]

[mcmc]
chains = 3
iterations = 20000
burnin = 10000
thin = 10
monitor = ["beta", "sigma2", "Sigma", "gamma"]

[scenario]
n_subjects = 500
grid = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0]
censoring_rate = 2.0
admin_censor_time = 2.0

[[scenario.covariates]]
name = "x1"
kind = "bernoulli"
p = 0.6

[[scenario.covariates]]
name = "x2"
kind = "normal"
mean = 0.0
sd = 1.0

[[scenario.covariates]]
name = "w1"
kind = "normal"
mean = 0.0
sd = 1.0

[[scenario.covariates]]
name = "w2"
kind = "bernoulli"
p = 0.5

[scenario.truth]
re_cov = [[1.0, 0.5], [0.5, 1.0]]

[[scenario.truth.markers]]
beta = [-0.5, 0.5, 0.5, 0.5]
sigma2 = 1.0

[[scenario.truth.causes]]
lambda0 = 0.5
alpha = [0.2, -0.2]
gammas = [[-0.5]]
"#;

#[test]
fn criterion_05_simulated_truths_recovered_across_replicates() {
    let cfg = config::parse(RECOVERY).unwrap();
    let scenario = cfg.scenario.expect("scenario section");
    let truths: [(&str, f64); 9] = [
        ("beta[1][1]", -0.5),
        ("beta[1][2]", 0.5),
        ("beta[1][3]", 0.5),
        ("beta[1][4]", 0.5),
        ("sigma2[1]", 1.0),
        ("Sigma[1][1]", 1.0),
        ("Sigma[2][1]", 0.5),
        ("Sigma[2][2]", 1.0),
        ("gamma[1]", -0.5),
    ];
    let mut hits = [0usize; 9];
    let mut worst_rhat = 0.0f64;
    for rep in 0..10u64 {
        let (data, _) = simulate_dataset(&scenario, 9_108 + rep).unwrap();
        let prepared = prepare(&cfg.spec, &data, &cfg.rule).unwrap();
        let mut mcmc = cfg.mcmc.clone();
        mcmc.seed = 7_308 + rep;
        let started = Instant::now();
        let chains = sampler::run(&prepared, &mcmc).unwrap();
        let secs = started.elapsed().as_secs_f64();
        assert!(secs < 600.0, "replicate {rep} took {secs:.0} s");
        let summaries = summarize(&chains, false).unwrap();
        for (k, (name, truth)) in truths.iter().enumerate() {
            let s = find(&summaries, name);
            assert!(
                s.rhat <= 1.1,
                "replicate {rep}: {name} has rhat {}",
                s.rhat
            );
            worst_rhat = worst_rhat.max(s.rhat);
            if s.q025 <= *truth && *truth <= s.q975 {
                hits[k] += 1;
            }
        }
    }
    for ((name, _), &h) in truths.iter().zip(&hits) {
        assert!(h >= 8, "{name} inside the 95% interval in only {h}/10 replicates");
    }
    println!(
        "criterion 5: PASS (interval hits per truth {hits:?} of 10, worst rhat {worst_rhat:.3})"
    );
}

/// Intercept-only Gaussian marker with no random effects; the shared
/// random effects link is then empty, so the event side cannot move the
/// marker parameters and their posterior has a checkable closed density.
const CONJUGATE_TOY: &str = r#"
[[model.markers]]
name = "y"
family = "gaussian"
fixed = ["intercept"]
random = []
association = "shared_random_effects"

[model.event]
structure = "single_event"
covariates = []

[mcmc]
chains = 3
iterations = 20000
burnin = 10000
thin = 10
seed = 406
monitor = ["beta", "sigma2"]
"#;

/// Posterior moments of (mean, variance) for iid Gaussian data under the
/// sampler's default priors (N(0, 1000) mean, Gamma(0.01, 0.01) precision),
/// by dense grid integration. Returns (E b, Var b, E v, Var v).
fn grid_posterior(ys: &[f64]) -> (f64, f64, f64, f64) {
    let n = ys.len() as f64;
    let ybar = ys.iter().sum::<f64>() / n;
    let ss: f64 = ys.iter().map(|y| (y - ybar).powi(2)).sum();
    let s2 = ss / (n - 1.0);
    let half = 8.0 * (s2 / n).sqrt();
    let (nb, nv) = (420, 600);
    let (blo, bhi) = (ybar - half, ybar + half);
    let (vlo, vhi) = (0.3 * s2, 3.0 * s2);
    let db = (bhi - blo) / (nb - 1) as f64;
    let dv = (vhi - vlo) / (nv - 1) as f64;
    let mut pts = Vec::with_capacity(nb * nv);
    let mut max_lp = f64::NEG_INFINITY;
    for ib in 0..nb {
        let b = blo + ib as f64 * db;
        for iv in 0..nv {
            let v = vlo + iv as f64 * dv;
            let lp = -(0.5 * n + 1.01) * v.ln() - 0.5 * (ss + n * (b - ybar).powi(2)) / v
                - b * b / 2000.0
                - 0.01 / v;
            max_lp = max_lp.max(lp);
            pts.push((b, v, lp));
        }
    }
    // The density decays to nothing well inside the box, so plain Riemann
    // sums are exact at f64 precision.
    let (mut z, mut sb, mut sbb, mut sv, mut svv) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (b, v, lp) in pts {
        let w = (lp - max_lp).exp();
        z += w;
        sb += w * b;
        sbb += w * b * b;
        sv += w * v;
        svv += w * v * v;
    }
    let mb = sb / z;
    let mv = sv / z;
    (mb, sbb / z - mb * mb, mv, svv / z - mv * mv)
}

/// Mean of `f` over every retained draw plus a batch-means Monte Carlo
/// standard error (batches of 50 consecutive draws within each chain).
fn mean_with_mcse(cols: &[Vec<f64>], f: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut batch_means = Vec::new();
    let mut total = 0.0;
    let mut n = 0usize;
    for col in cols {
        for batch in col.chunks(50) {
            batch_means.push(batch.iter().map(|&x| f(x)).sum::<f64>() / batch.len() as f64);
        }
        total += col.iter().map(|&x| f(x)).sum::<f64>();
        n += col.len();
    }
    let est = total / n as f64;
    let b = batch_means.len() as f64;
    let var_b = batch_means.iter().map(|m| (m - est).powi(2)).sum::<f64>() / (b - 1.0);
    (est, (var_b / b).sqrt())
}

fn monitored_columns(chains: &[ChainOutput], name: &str) -> Vec<Vec<f64>> {
    chains
        .iter()
        .map(|c| c.column(name).unwrap_or_else(|| panic!("no column {name}")))
        .collect()
}

#[test]
fn criterion_06_sampler_matches_the_exact_posterior_on_a_toy_model() {
    let cfg = config::parse(CONJUGATE_TOY).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(640);
    let gen = Normal::new(1.8, 0.7).unwrap();
    let mut ys = Vec::new();
    let subjects: Vec<SubjectData> = (0..40)
        .map(|i| {
            let rows = [0.0, 0.5, 1.0]
                .iter()
                .map(|&time| {
                    let y = gen.sample(&mut rng);
                    ys.push(y);
                    MarkerSeries {
                        time,
                        covariates: vec![],
                        values: vec![Some(y)],
                    }
                })
                .collect();
            SubjectData {
                id: format!("s{}", i + 1),
                event_time: 2.0,
                status: 0,
                covariates: vec![],
                rows,
            }
        })
        .collect();
    let data = Dataset::new(vec!["y".into()], vec![], vec![], subjects);
    let prepared = prepare(&cfg.spec, &data, &cfg.rule).unwrap();
    let chains = sampler::run(&prepared, &cfg.mcmc).unwrap();

    let (mb, vb, mv, vv) = grid_posterior(&ys);
    let mut report = String::new();
    for (name, exact_mean, exact_var) in
        [("beta[1][1]", mb, vb), ("sigma2[1]", mv, vv)]
    {
        let cols = monitored_columns(&chains, name);
        let (mean_est, mcse_mean) = mean_with_mcse(&cols, |x| x);
        let (var_est, mcse_var) = mean_with_mcse(&cols, |x| (x - mean_est).powi(2));
        let z_mean = (mean_est - exact_mean).abs() / mcse_mean;
        let z_var = (var_est - exact_var).abs() / mcse_var;
        assert!(
            z_mean <= 3.0,
            "{name} mean {mean_est} vs exact {exact_mean} ({z_mean:.2} mcse)"
        );
        assert!(
            z_var <= 3.0,
            "{name} variance {var_est} vs exact {exact_var} ({z_var:.2} mcse)"
        );
        report.push_str(&format!(" {name} mean {z_mean:.2} var {z_var:.2}"));
    }
    println!("criterion 6: PASS (deviations in mcse units:{report})");
}

/// Mixture-cure model with no covariates anywhere, for the exact
/// class-conditional check.
const CURE_EXACT: &str = r#"
[[model.markers]]
name = "y"
family = "gaussian"
fixed = ["intercept", "time"]
random = ["intercept", "time"]
association = "current_value"

[model.event]
structure = "mixture_cure"
covariates = []
incidence_covariates = []
"#;

/// Small cure scenario for the whole-run class-flip check.
const CURE_RUN: &str = r#"
[[model.markers]]
name = "y"
family = "gaussian"
fixed = ["intercept", "time"]
random = ["intercept", "time"]
association = "current_value"

[model.event]
structure = "mixture_cure"
covariates = ["w1"]
incidence_covariates = ["w1"]

[mcmc]
chains = 2
iterations = 800
burnin = 400
thin = 2
seed = 407
monitor = ["u"]

[scenario]
n_subjects = 60
grid = [0.0, 0.4, 0.8, 1.2, 1.6, 2.0]
censoring_rate = 0.3
admin_censor_time = 2.0

[[scenario.covariates]]
name = "w1"
kind = "normal"
mean = 0.0
sd = 1.0

[scenario.truth]
re_cov = [[0.7, 0.1], [0.1, 0.5]]

[[scenario.truth.markers]]
beta = [0.5, -0.3]
sigma2 = 0.6

[[scenario.truth.causes]]
lambda0 = 0.8
alpha = [0.4]
gammas = [[0.3]]

[scenario.truth.cure]
incidence = [0.6, -0.5]
cured_betas = [[1.2, 0.0]]
cured_sigma2 = [0.6]
cured_re_cov = [[0.7, 0.1], [0.1, 0.5]]
"#;

#[test]
fn criterion_07_cure_class_conditional_is_exact_and_events_never_flip() {
    // A censored subject whose two classes share every parameter: the
    // longitudinal factors cancel exactly, and with the baseline level
    // pushed to e^-700 the survival factor is absorbed by f64 rounding, so
    // the conditional log odds must equal the incidence intercept bit for
    // bit.
    let cfg = config::parse(CURE_EXACT).unwrap();
    let subjects = vec![
        SubjectData {
            id: "s1".into(),
            event_time: 1.5,
            status: 0,
            covariates: vec![],
            rows: vec![
                MarkerSeries { time: 0.0, covariates: vec![], values: vec![Some(1.0)] },
                MarkerSeries { time: 0.5, covariates: vec![], values: vec![Some(1.2)] },
                MarkerSeries { time: 1.0, covariates: vec![], values: vec![Some(0.8)] },
            ],
        },
        SubjectData {
            id: "s2".into(),
            event_time: 1.8,
            status: 1,
            covariates: vec![],
            rows: vec![
                MarkerSeries { time: 0.0, covariates: vec![], values: vec![Some(0.4)] },
                MarkerSeries { time: 0.6, covariates: vec![], values: vec![Some(0.9)] },
            ],
        },
        SubjectData {
            id: "s3".into(),
            event_time: 1.0,
            status: 0,
            covariates: vec![],
            rows: vec![MarkerSeries { time: 0.0, covariates: vec![], values: vec![Some(1.1)] }],
        },
    ];
    let data = Dataset::new(vec!["y".into()], vec![], vec![], subjects);
    let prepared = prepare(&cfg.spec, &data, &cfg.rule).unwrap();
    let mut st = initial_state(&prepared, 7);
    st.causes[0].alpha = vec![-700.0];
    st.causes[0].gammas = vec![vec![0.0]];
    let betas = st.betas.clone();
    let sigma2 = st.sigma2.clone();
    let re_cov = st.re_cov.clone();
    let cure = st.cure.as_mut().expect("cure parameters");
    cure.incidence = vec![0.7];
    cure.cured_betas = betas;
    cure.cured_sigma2 = sigma2;
    cure.cured_re_cov = re_cov;

    let log_odds = cure_susceptible_log_odds(&prepared, &mut st, 0);
    assert!(
        (log_odds - 0.7).abs() <= 1e-12,
        "log odds {log_odds} vs incidence 0.7"
    );
    let p = 1.0 / (1.0 + (-0.7f64).exp());
    let conditional = 1.0 / (1.0 + (-log_odds).exp());
    assert!((conditional - p).abs() <= 1e-12);

    // Same state with an ordinary baseline level: the survival factor now
    // bites and the odds drop by exactly the cumulative hazard at 1.5.
    st.causes[0].alpha = vec![0.0];
    let shifted = cure_susceptible_log_odds(&prepared, &mut st, 0);
    assert!(
        (shifted - (0.7 - 1.5)).abs() <= 1e-9,
        "log odds with unit baseline: {shifted}"
    );

    // Whole-run invariant: subjects with an observed event stay susceptible
    // in every retained draw.
    let cfg = config::parse(CURE_RUN).unwrap();
    let scenario = cfg.scenario.expect("scenario section");
    let (data, _) = simulate_dataset(&scenario, 470).unwrap();
    let n_events = data.subjects.iter().filter(|s| s.status == 1).count();
    assert!(n_events >= 5, "only {n_events} events simulated");
    let prepared = prepare(&cfg.spec, &data, &cfg.rule).unwrap();
    let chains = sampler::run(&prepared, &cfg.mcmc).unwrap();
    let mut checked = 0usize;
    for (i, s) in data.subjects.iter().enumerate() {
        if s.status != 1 {
            continue;
        }
        for chain in &chains {
            let col = chain.column(&format!("u[{}]", i + 1)).expect("class draws");
            assert!(
                col.iter().all(|&u| u == 1.0),
                "event subject {} left the susceptible class",
                s.id
            );
            checked += col.len();
        }
    }
    println!(
        "criterion 7: PASS (log odds exact at 1e-12, {checked} class draws for {n_events} event subjects all susceptible)"
    );
}

#[test]
fn criterion_08_gelman_rubin_reference_fixtures() {
    let mut rng = ChaCha12Rng::seed_from_u64(408);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let a: Vec<f64> = (0..500).map(|_| normal.sample(&mut rng)).collect();
    let identical = gelman_rubin(&[&a, &a]).unwrap();
    assert!(
        (identical - 1.0).abs() <= 1e-12,
        "identical chains: {identical}"
    );
    let b: Vec<f64> = (0..500).map(|_| 10.0 + normal.sample(&mut rng)).collect();
    let separated = gelman_rubin(&[&a, &b]).unwrap();
    assert!(separated > 3.0, "separated chains: {separated}");
    println!(
        "criterion 8: PASS (identical chains {identical:.15}, separated chains {separated:.1})"
    );
}

/// Look for a reference dataset directory: an env override first, then
/// `data/<name>` at the workspace root. Both files must be present.
fn reference_data_dir(env_key: &str, fallback: &str) -> Option<PathBuf> {
    let mut candidates = Vec::new();
    if let Ok(dir) = std::env::var(env_key) {
        candidates.push(PathBuf::from(dir));
    }
    candidates.push(Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(fallback));
    candidates
        .into_iter()
        .find(|p| p.join("long.csv").is_file() && p.join("surv.csv").is_file())
}

/// Five pre-transformed liver biomarkers, each with its own current-value
/// link into a Weibull hazard adjusted for treatment and age.
const LIVER_FIVE_MARKER: &str = r#"
[[model.markers]]
name = "albumin"
family = "gaussian"
fixed = ["intercept", "time"]
random = ["intercept", "time"]
association = "current_value"

[[model.markers]]
name = "alkaline"
family = "gaussian"
fixed = ["intercept", "time"]
random = ["intercept", "time"]
association = "current_value"

[[model.markers]]
name = "sgot"
family = "gaussian"
fixed = ["intercept", "time"]
random = ["intercept", "time"]
association = "current_value"

[[model.markers]]
name = "platelets"
family = "gaussian"
fixed = ["intercept", "time"]
random = ["intercept", "time"]
association = "current_value"

[[model.markers]]
name = "serbilir"
family = "gaussian"
fixed = ["intercept", "time"]
random = ["intercept", "time"]
association = "current_value"

[model.event]
structure = "single_event"
baselines = [{ kind = "weibull" }]
covariates = ["drug", "age"]

[mcmc]
chains = 3
iterations = 20000
burnin = 10000
thin = 10
seed = 409
monitor = ["gamma"]
"#;

/// CD4 trajectory with a cure fraction; all four trial covariates enter
/// both the incidence and the Weibull latency parts.
const HIV_CURE: &str = r#"
[[model.markers]]
name = "cd4"
family = "gaussian"
fixed = ["intercept", "time"]
random = ["intercept", "time"]
association = "current_value"

[model.event]
structure = "mixture_cure"
baselines = [{ kind = "weibull" }]
covariates = ["drug", "gender", "prev_oi", "azt"]
incidence_covariates = ["drug", "gender", "prev_oi", "azt"]

[mcmc]
chains = 3
iterations = 20000
burnin = 10000
thin = 10
seed = 419
monitor = ["gamma", "xi"]
"#;

fn fit_reference(dir: &Path, toml: &str) -> Vec<ParameterSummary> {
    let cfg = config::parse(toml).unwrap();
    let marker_names: Vec<String> = cfg.spec.markers.iter().map(|m| m.name.clone()).collect();
    let data = Dataset::from_dir(dir, &marker_names).unwrap();
    let prepared = prepare(&cfg.spec, &data, &cfg.rule).unwrap();
    let chains = sampler::run(&prepared, &cfg.mcmc).unwrap();
    summarize(&chains, false).unwrap()
}

#[test]
fn criterion_09_reference_datasets_reproduce_published_signs() {
    // Stretch check against two well-known public datasets; it cannot run
    // in an offline build, so it reports SKIP when the files are absent.
    // Expected layout, both directories: long.csv with the marker columns
    // already on the analysis scale, surv.csv with the listed covariates.
    let liver = reference_data_dir("JOINTFUSE_PBC2_DIR", "data/pbc2");
    let hiv = reference_data_dir("JOINTFUSE_AIDS_DIR", "data/aids");
    if liver.is_none() && hiv.is_none() {
        println!(
            "criterion 9: SKIP (reference datasets not present; set JOINTFUSE_PBC2_DIR / JOINTFUSE_AIDS_DIR or place long.csv + surv.csv under data/pbc2 and data/aids)"
        );
        return;
    }
    let mut checked = Vec::new();
    if let Some(dir) = liver {
        let summaries = fit_reference(&dir, LIVER_FIVE_MARKER);
        let g1 = find(&summaries, "gamma[1]");
        assert!(
            g1.q975 < 0.0 && (g1.mean + 2.040).abs() <= 0.5,
            "albumin association: mean {} ({}, {})",
            g1.mean,
            g1.q025,
            g1.q975
        );
        let g5 = find(&summaries, "gamma[5]");
        assert!(
            g5.q025 > 0.0 && (g5.mean - 1.266).abs() <= 0.5,
            "bilirubin association: mean {} ({}, {})",
            g5.mean,
            g5.q025,
            g5.q975
        );
        checked.push("liver");
    }
    if let Some(dir) = hiv {
        let summaries = fit_reference(&dir, HIV_CURE);
        let xi4 = find(&summaries, "xi[4]");
        assert!(
            xi4.q025 > 0.0 && (xi4.mean - 4.354).abs() <= 0.5,
            "prior-infection incidence: mean {} ({}, {})",
            xi4.mean,
            xi4.q025,
            xi4.q975
        );
        let g = find(&summaries, "gamma[1]");
        assert!(
            g.q975 < 0.0 && (g.mean + 0.263).abs() <= 0.5,
            "cd4 association: mean {} ({}, {})",
            g.mean,
            g.q025,
            g.q975
        );
        checked.push("hiv");
    }
    println!("criterion 9: PASS (reference fits checked: {checked:?})");
}

/// Small end-to-end configuration for the determinism check.
const CLI_SMALL: &str = r#"
[[model.markers]]
name = "y"
family = "gaussian"
fixed = ["intercept", "time", "x1"]
random = ["intercept", "time"]
association = "current_value"

[model.event]
structure = "single_event"
covariates = ["w1"]

[mcmc]
chains = 2
iterations = 600
burnin = 300
thin = 3
seed = 11
monitor = ["beta", "sigma2", "gamma"]

[scenario]
n_subjects = 60
grid = [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0]
censoring_rate = 0.5
admin_censor_time = 2.0

[[scenario.covariates]]
name = "x1"
kind = "bernoulli"
p = 0.5

[[scenario.covariates]]
name = "w1"
kind = "normal"
mean = 0.0
sd = 1.0

[scenario.truth]
re_cov = [[0.8, 0.2], [0.2, 0.5]]

[[scenario.truth.markers]]
beta = [-0.5, 0.5, 0.4]
sigma2 = 1.0

[[scenario.truth.causes]]
lambda0 = 0.4
alpha = [0.3]
gammas = [[-0.4]]
"#;

#[test]
fn criterion_10_repeat_cli_runs_write_identical_summary_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let config_path = tmp.path().join("run.toml");
    std::fs::write(&config_path, CLI_SMALL).unwrap();
    let config = config_path.to_str().unwrap();
    let data_dir = tmp.path().join("data");
    let data = data_dir.to_str().unwrap();

    let bin = env!("CARGO_BIN_EXE_jointfuse");
    let sim = Command::new(bin)
        .args(["simulate", "--config", config, "--out", data])
        .output()
        .unwrap();
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));

    let mut bytes = Vec::new();
    for name in ["fit1", "fit2"] {
        let out_dir = tmp.path().join(name);
        let fit = Command::new(bin)
            .args([
                "fit",
                "--config",
                config,
                "--data-dir",
                data,
                "--out",
                out_dir.to_str().unwrap(),
                // The run is deliberately short; convergence is not the
                // point here, identical bytes are.
                "--rhat-threshold",
                "1000",
            ])
            .output()
            .unwrap();
        assert!(fit.status.success(), "{}", String::from_utf8_lossy(&fit.stderr));
        bytes.push(std::fs::read(out_dir.join("summary.json")).unwrap());
    }
    assert!(!bytes[0].is_empty());
    assert_eq!(bytes[0], bytes[1], "summary.json differs between runs");
    println!(
        "criterion 10: PASS (summary.json identical across runs, {} bytes)",
        bytes[0].len()
    );
}
