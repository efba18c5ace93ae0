//! Single-chain sweep: adaptive Metropolis blocks for the non-conjugate
//! parameters, Gibbs draws where the full conditionals are standard, and
//! exact Bernoulli flips for the latent cure classes.
//!
//! Likelihood pieces are cached per subject (marker, event, random-effect
//! terms) so each block update only recomputes what it can actually change;
//! proposals mutate the state in place and are reverted on rejection.

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::hazard::{log_event_density, BaselineModel};
use crate::likelihood::{log_prior, subject_marker_loglik, subject_re_loglik};
use crate::model::{initial_state, BaselineParams, MarkerFamily, ParamState, PreparedModel};

use super::conjugate::{gamma_draw, precision_gibbs_draw, wishart_rate_draw};
use super::monitor::{extract, MonitorEntry};
use super::{BlockStats, ChainOutput, McmcConfig, SamplerError};

/// Streams per chain; block identifiers index into this range so every
/// (chain, block) pair draws from its own ChaCha stream.
const STREAM_STRIDE: u64 = 4096;

/// Ridge added to empirical proposal covariances.
const PROPOSAL_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq)]
enum BlockKind {
    /// All per-subject random-effect vectors, one scale shared.
    SubjectRe,
    Beta { k: usize },
    BetaProb { k: usize },
    BetaCured { k: usize },
    Sigma2Gibbs,
    ReCovGibbs,
    AlphaGamma { cause: usize },
    /// Weibull shape, proposed on the log scale.
    LogShape { cause: usize },
    /// Piecewise-constant heights, proposed on the log scale.
    LogHeights { cause: usize },
    /// Spline intercept plus coefficients.
    SplineCoefs { cause: usize },
    SplineTauGibbs,
    /// Hurdle dispersion, proposed on the log scale.
    LogDispersion { k: usize },
    CureFlips,
    Incidence,
}

impl BlockKind {
    /// Parameters proposed on the log scale carry a change-of-variables
    /// term in the acceptance ratio.
    fn log_scale_parameterized(&self) -> bool {
        matches!(
            self,
            BlockKind::LogShape { .. } | BlockKind::LogHeights { .. } | BlockKind::LogDispersion { .. }
        )
    }

    /// Whether the proposal covariance is learned from the chain's own
    /// draws (everything but the random effects, which use chol(D)).
    fn learns_covariance(&self) -> bool {
        !matches!(
            self,
            BlockKind::SubjectRe
                | BlockKind::Sigma2Gibbs
                | BlockKind::ReCovGibbs
                | BlockKind::SplineTauGibbs
                | BlockKind::CureFlips
        )
    }
}

struct Block {
    kind: BlockKind,
    label: String,
    dim: usize,
    gibbs: bool,
    log_scale: f64,
    target: f64,
    accepts: u64,
    attempts: u64,
    windows: u64,
    // Welford accumulator over the block's draws (burn-in only).
    count: u64,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
    prop_chol: Option<DMatrix<f64>>,
}

impl Block {
    fn mh(kind: BlockKind, label: String, dim: usize, init_scale: f64, target: f64) -> Block {
        Block {
            kind,
            label,
            dim,
            gibbs: false,
            log_scale: init_scale.ln(),
            target,
            accepts: 0,
            attempts: 0,
            windows: 0,
            count: 0,
            mean: DVector::zeros(dim),
            m2: DMatrix::zeros(dim, dim),
            prop_chol: None,
        }
    }

    fn gibbs(kind: BlockKind, label: String) -> Block {
        Block {
            kind,
            label,
            dim: 0,
            gibbs: true,
            log_scale: 0.0,
            target: 0.0,
            accepts: 0,
            attempts: 0,
            windows: 0,
            count: 0,
            mean: DVector::zeros(0),
            m2: DMatrix::zeros(0, 0),
            prop_chol: None,
        }
    }

}

fn class_of(state: &ParamState, i: usize) -> u8 {
    state.cure.as_ref().map_or(1, |c| c.classes[i])
}

fn class_matches(state: &ParamState, i: usize, filter: Option<u8>) -> bool {
    filter.is_none_or(|c| class_of(state, i) == c)
}

/// Reads the current value of an MH block as a flat vector (log scale for
/// positive parameters).
fn block_value(state: &ParamState, kind: &BlockKind) -> Vec<f64> {
    match kind {
        BlockKind::Beta { k } => state.betas[*k].clone(),
        BlockKind::BetaProb { k } => state.hurdles[*k]
            .as_ref()
            .expect("hurdle")
            .probability_coefficients
            .clone(),
        BlockKind::BetaCured { k } => state.cure.as_ref().expect("cure").cured_betas[*k].clone(),
        BlockKind::AlphaGamma { cause } => {
            let c = &state.causes[*cause];
            let mut v = c.alpha.clone();
            for g in &c.gammas {
                v.extend_from_slice(g);
            }
            v
        }
        BlockKind::LogShape { cause } => match &state.causes[*cause].baseline {
            BaselineParams::Weibull { nu } => vec![nu.ln()],
            _ => unreachable!("shape block on non-Weibull baseline"),
        },
        BlockKind::LogHeights { cause } => match &state.causes[*cause].baseline {
            BaselineParams::PiecewiseConstant { heights } => {
                heights.iter().map(|h| h.ln()).collect()
            }
            _ => unreachable!("heights block on non-piecewise baseline"),
        },
        BlockKind::SplineCoefs { cause } => match &state.causes[*cause].baseline {
            BaselineParams::BSpline {
                intercept,
                coefficients,
                ..
            } => {
                let mut v = vec![*intercept];
                v.extend_from_slice(coefficients);
                v
            }
            _ => unreachable!("spline block on non-spline baseline"),
        },
        BlockKind::LogDispersion { k } => {
            vec![state.hurdles[*k].as_ref().expect("hurdle").dispersion.ln()]
        }
        BlockKind::Incidence => state.cure.as_ref().expect("cure").incidence.clone(),
        _ => unreachable!("no vector value for Gibbs block"),
    }
}

fn set_block_value(state: &mut ParamState, kind: &BlockKind, v: &[f64]) {
    match kind {
        BlockKind::Beta { k } => state.betas[*k].copy_from_slice(v),
        BlockKind::BetaProb { k } => state.hurdles[*k]
            .as_mut()
            .expect("hurdle")
            .probability_coefficients
            .copy_from_slice(v),
        BlockKind::BetaCured { k } => state
            .cure
            .as_mut()
            .expect("cure")
            .cured_betas[*k]
            .copy_from_slice(v),
        BlockKind::AlphaGamma { cause } => {
            let c = &mut state.causes[*cause];
            let na = c.alpha.len();
            c.alpha.copy_from_slice(&v[..na]);
            let mut at = na;
            for g in &mut c.gammas {
                let len = g.len();
                g.copy_from_slice(&v[at..at + len]);
                at += len;
            }
        }
        BlockKind::LogShape { cause } => {
            if let BaselineParams::Weibull { nu } = &mut state.causes[*cause].baseline {
                *nu = v[0].exp();
            }
        }
        BlockKind::LogHeights { cause } => {
            if let BaselineParams::PiecewiseConstant { heights } =
                &mut state.causes[*cause].baseline
            {
                for (h, x) in heights.iter_mut().zip(v) {
                    *h = x.exp();
                }
            }
        }
        BlockKind::SplineCoefs { cause } => {
            if let BaselineParams::BSpline {
                intercept,
                coefficients,
                ..
            } = &mut state.causes[*cause].baseline
            {
                *intercept = v[0];
                coefficients.copy_from_slice(&v[1..]);
            }
        }
        BlockKind::LogDispersion { k } => {
            state.hurdles[*k].as_mut().expect("hurdle").dispersion = v[0].exp();
        }
        BlockKind::Incidence => state
            .cure
            .as_mut()
            .expect("cure")
            .incidence
            .copy_from_slice(v),
        _ => unreachable!("no vector value for Gibbs block"),
    }
}

/// Which cached likelihood pieces a block can move: an optional marker
/// (with a class filter) and an optional event recompute (with a class
/// filter; None = both classes).
fn affected(
    prepared: &PreparedModel,
    kind: &BlockKind,
) -> (Option<(usize, Option<u8>)>, Option<Option<u8>>) {
    match kind {
        BlockKind::Beta { k } => {
            let event = prepared.markers[*k].uses_trajectory.then_some(Some(1));
            (Some((*k, Some(1))), event)
        }
        BlockKind::BetaProb { k } | BlockKind::LogDispersion { k } => (Some((*k, Some(1))), None),
        BlockKind::BetaCured { k } => (Some((*k, Some(0))), None),
        BlockKind::AlphaGamma { .. }
        | BlockKind::LogShape { .. }
        | BlockKind::LogHeights { .. }
        | BlockKind::SplineCoefs { .. } => (None, Some(Some(1))),
        BlockKind::Incidence => (None, Some(None)),
        _ => (None, None),
    }
}

/// Log odds of subject `i` being susceptible given everything else: the
/// exact Bernoulli full conditional used for the latent class flips.
/// Temporarily toggles `classes[i]` and restores it before returning.
pub fn cure_susceptible_log_odds(
    prepared: &PreparedModel,
    state: &mut ParamState,
    i: usize,
) -> f64 {
    let old = state.cure.as_ref().expect("cure structure").classes[i];
    let subject_ll = |state: &ParamState| {
        let mut acc =
            subject_re_loglik(prepared, state, i) + log_event_density(prepared, state, i);
        for k in 0..prepared.n_markers() {
            acc += subject_marker_loglik(prepared, state, i, k);
        }
        acc
    };
    state.cure.as_mut().unwrap().classes[i] = 1;
    let l1 = subject_ll(state);
    state.cure.as_mut().unwrap().classes[i] = 0;
    let l0 = subject_ll(state);
    state.cure.as_mut().unwrap().classes[i] = old;
    l1 - l0
}

pub(super) struct ChainRun<'a> {
    prepared: &'a PreparedModel,
    cfg: &'a McmcConfig,
    chain: usize,
    state: ParamState,
    marker_ll: Vec<Vec<f64>>,
    event_ll: Vec<f64>,
    re_ll: Vec<f64>,
    chol_re: Option<DMatrix<f64>>,
    chol_cured: Option<DMatrix<f64>>,
    blocks: Vec<Block>,
    rngs: Vec<ChaCha12Rng>,
    subject_re_block: Option<usize>,
    // scratch buffers for the per-subject update
    scratch_b: Vec<f64>,
    scratch_z: Vec<f64>,
    scratch_mk: Vec<f64>,
    scratch_marker: Vec<(usize, f64)>,
    scratch_event: Vec<(usize, f64)>,
}

impl<'a> ChainRun<'a> {
    pub(super) fn new(
        prepared: &'a PreparedModel,
        cfg: &'a McmcConfig,
        chain: usize,
    ) -> Result<ChainRun<'a>, SamplerError> {
        let state = initial_state(prepared, cfg.seed.wrapping_add(chain as u64));
        let n = prepared.n_subjects();
        let nk = prepared.n_markers();
        let mut run = ChainRun {
            prepared,
            cfg,
            chain,
            state,
            marker_ll: vec![vec![0.0; n]; nk],
            event_ll: vec![0.0; n],
            re_ll: vec![0.0; n],
            chol_re: None,
            chol_cured: None,
            blocks: Vec::new(),
            rngs: Vec::new(),
            subject_re_block: None,
            scratch_b: vec![0.0; prepared.nb],
            scratch_z: vec![0.0; prepared.nb],
            scratch_mk: vec![0.0; nk],
            scratch_marker: Vec::new(),
            scratch_event: Vec::new(),
        };
        run.refresh_chols()?;
        for i in 0..n {
            for k in 0..nk {
                run.marker_ll[k][i] = subject_marker_loglik(prepared, &run.state, i, k);
            }
            run.event_ll[i] = log_event_density(prepared, &run.state, i);
            run.re_ll[i] = subject_re_loglik(prepared, &run.state, i);
        }
        if !run.total_log_posterior().is_finite() {
            return Err(SamplerError::NonFiniteLogPosterior);
        }
        run.build_blocks();
        run.rngs = (0..run.blocks.len())
            .map(|bid| {
                let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
                rng.set_stream(chain as u64 * STREAM_STRIDE + bid as u64 + 1);
                rng
            })
            .collect();
        Ok(run)
    }

    fn total_log_posterior(&self) -> f64 {
        let mut lp = log_prior(self.prepared, &self.state);
        for lls in &self.marker_ll {
            lp += lls.iter().sum::<f64>();
        }
        lp += self.event_ll.iter().sum::<f64>();
        lp += self.re_ll.iter().sum::<f64>();
        lp
    }

    fn refresh_chols(&mut self) -> Result<(), SamplerError> {
        if self.prepared.nb == 0 {
            return Ok(());
        }
        self.chol_re = Some(
            self.state
                .re_cov
                .clone()
                .cholesky()
                .ok_or_else(|| {
                    SamplerError::DegenerateDraw("random-effect covariance not positive definite".into())
                })?
                .l(),
        );
        if let Some(c) = &self.state.cure {
            self.chol_cured = Some(
                c.cured_re_cov
                    .clone()
                    .cholesky()
                    .ok_or_else(|| {
                        SamplerError::DegenerateDraw(
                            "cured random-effect covariance not positive definite".into(),
                        )
                    })?
                    .l(),
            );
        }
        Ok(())
    }

    fn build_blocks(&mut self) {
        let p = self.prepared;
        let cfg = self.cfg;
        let target = |dim: usize| {
            if dim == 1 {
                cfg.target_scalar
            } else {
                cfg.target_vector
            }
        };
        let mut blocks = Vec::new();
        if p.nb > 0 && p.n_subjects() > 0 {
            self.subject_re_block = Some(blocks.len());
            blocks.push(Block::mh(
                BlockKind::SubjectRe,
                "re".into(),
                p.nb,
                2.38 / (p.nb as f64).sqrt(),
                target(p.nb),
            ));
        }
        for (k, m) in p.markers.iter().enumerate() {
            blocks.push(Block::mh(
                BlockKind::Beta { k },
                format!("beta[{}]", k + 1),
                m.n_fixed,
                0.1,
                target(m.n_fixed),
            ));
        }
        for (k, m) in p.markers.iter().enumerate() {
            if m.family == MarkerFamily::HurdleNegBinomial {
                blocks.push(Block::mh(
                    BlockKind::BetaProb { k },
                    format!("beta_pi[{}]", k + 1),
                    m.n_prob,
                    0.1,
                    target(m.n_prob),
                ));
            }
        }
        if p.is_cure() {
            for (k, m) in p.markers.iter().enumerate() {
                blocks.push(Block::mh(
                    BlockKind::BetaCured { k },
                    format!("beta_cured[{}]", k + 1),
                    m.n_fixed,
                    0.1,
                    target(m.n_fixed),
                ));
            }
        }
        if p.markers.iter().any(|m| m.family == MarkerFamily::Gaussian) {
            blocks.push(Block::gibbs(BlockKind::Sigma2Gibbs, "sigma2".into()));
        }
        if p.nb > 0 {
            blocks.push(Block::gibbs(BlockKind::ReCovGibbs, "Sigma".into()));
        }
        for (l, cause) in p.causes.iter().enumerate() {
            let dim = cause.n_alpha + p.markers.iter().map(|m| m.gamma_dim).sum::<usize>();
            if dim > 0 {
                blocks.push(Block::mh(
                    BlockKind::AlphaGamma { cause: l },
                    format!("alpha_gamma[{}]", l + 1),
                    dim,
                    0.1,
                    target(dim),
                ));
            }
            match &cause.baseline {
                BaselineModel::Constant => {}
                BaselineModel::Weibull => blocks.push(Block::mh(
                    BlockKind::LogShape { cause: l },
                    format!("nu[{}]", l + 1),
                    1,
                    0.1,
                    cfg.target_scalar,
                )),
                BaselineModel::Piecewise { knots } => blocks.push(Block::mh(
                    BlockKind::LogHeights { cause: l },
                    format!("h[{}]", l + 1),
                    knots.len() + 1,
                    0.1,
                    target(knots.len() + 1),
                )),
                BaselineModel::Spline { basis, .. } => blocks.push(Block::mh(
                    BlockKind::SplineCoefs { cause: l },
                    format!("spline[{}]", l + 1),
                    1 + basis.n_basis(),
                    0.1,
                    target(1 + basis.n_basis()),
                )),
            }
        }
        if p.causes
            .iter()
            .any(|c| matches!(c.baseline, BaselineModel::Spline { .. }))
        {
            blocks.push(Block::gibbs(BlockKind::SplineTauGibbs, "spline_tau".into()));
        }
        for (k, m) in p.markers.iter().enumerate() {
            if m.family == MarkerFamily::HurdleNegBinomial {
                blocks.push(Block::mh(
                    BlockKind::LogDispersion { k },
                    format!("r[{}]", k + 1),
                    1,
                    0.1,
                    cfg.target_scalar,
                ));
            }
        }
        if p.is_cure() {
            blocks.push(Block::gibbs(BlockKind::CureFlips, "u".into()));
            let dim = 1 + p.spec.event.incidence_covariates.len();
            blocks.push(Block::mh(
                BlockKind::Incidence,
                "xi".into(),
                dim,
                0.1,
                target(dim),
            ));
        }
        self.blocks = blocks;
    }

    pub(super) fn sweep(&mut self) -> Result<(), SamplerError> {
        for bid in 0..self.blocks.len() {
            match self.blocks[bid].kind.clone() {
                BlockKind::SubjectRe => {
                    for i in 0..self.prepared.n_subjects() {
                        self.re_update_one(i, bid);
                    }
                }
                BlockKind::Sigma2Gibbs => self.sigma2_gibbs(bid),
                BlockKind::ReCovGibbs => self.recov_gibbs(bid)?,
                BlockKind::SplineTauGibbs => self.tau_gibbs(bid),
                BlockKind::CureFlips => self.cure_flips(bid),
                _ => self.vector_mh(bid),
            }
        }
        Ok(())
    }

    /// One Metropolis update of subject `i`'s random effects; the proposal
    /// is a scaled Cholesky factor of the subject's class covariance.
    fn re_update_one(&mut self, i: usize, bid: usize) {
        let nb = self.prepared.nb;
        if nb == 0 {
            return;
        }
        self.blocks[bid].attempts += 1;
        let scale = self.blocks[bid].log_scale.exp();
        let std = Normal::new(0.0, 1.0).expect("standard normal");
        for z in self.scratch_z.iter_mut() {
            *z = std.sample(&mut self.rngs[bid]);
        }
        self.scratch_b.copy_from_slice(&self.state.random_effects[i]);
        {
            let chol = if class_of(&self.state, i) == 0 {
                self.chol_cured.as_ref()
            } else {
                self.chol_re.as_ref()
            };
            let Some(l) = chol else { return };
            let b = &mut self.state.random_effects[i];
            for r in 0..nb {
                let mut acc = 0.0;
                for c in 0..=r {
                    acc += l[(r, c)] * self.scratch_z[c];
                }
                b[r] += scale * acc;
            }
        }
        let re_new = subject_re_loglik(self.prepared, &self.state, i);
        let mut delta = re_new - self.re_ll[i];
        for k in 0..self.prepared.n_markers() {
            self.scratch_mk[k] = subject_marker_loglik(self.prepared, &self.state, i, k);
            delta += self.scratch_mk[k] - self.marker_ll[k][i];
        }
        let ev_new = log_event_density(self.prepared, &self.state, i);
        delta += ev_new - self.event_ll[i];
        let accept = delta > f64::NEG_INFINITY
            && !delta.is_nan()
            && self.rngs[bid].random::<f64>().ln() < delta;
        if accept {
            self.re_ll[i] = re_new;
            for k in 0..self.prepared.n_markers() {
                self.marker_ll[k][i] = self.scratch_mk[k];
            }
            self.event_ll[i] = ev_new;
            self.blocks[bid].accepts += 1;
        } else {
            self.state.random_effects[i].copy_from_slice(&self.scratch_b);
        }
    }

    fn vector_mh(&mut self, bid: usize) {
        let kind = self.blocks[bid].kind.clone();
        let old = block_value(&self.state, &kind);
        let dim = old.len();
        if dim == 0 {
            return;
        }
        self.blocks[bid].attempts += 1;
        let std = Normal::new(0.0, 1.0).expect("standard normal");
        let z: Vec<f64> = (0..dim).map(|_| std.sample(&mut self.rngs[bid])).collect();
        let mut newv = old.clone();
        {
            let blk = &self.blocks[bid];
            let s = blk.log_scale.exp();
            match &blk.prop_chol {
                Some(l) => {
                    for r in 0..dim {
                        let mut acc = 0.0;
                        for c in 0..=r {
                            acc += l[(r, c)] * z[c];
                        }
                        newv[r] += s * acc;
                    }
                }
                None => {
                    for r in 0..dim {
                        newv[r] += s * z[r];
                    }
                }
            }
        }
        let lp_old = log_prior(self.prepared, &self.state);
        set_block_value(&mut self.state, &kind, &newv);
        let lp_new = log_prior(self.prepared, &self.state);
        let mut delta = lp_new - lp_old;
        if kind.log_scale_parameterized() {
            delta += newv.iter().sum::<f64>() - old.iter().sum::<f64>();
        }
        self.scratch_marker.clear();
        self.scratch_event.clear();
        let (marker_aff, event_aff) = affected(self.prepared, &kind);
        if delta > f64::NEG_INFINITY && !delta.is_nan() {
            if let Some((k, filter)) = marker_aff {
                for i in 0..self.prepared.n_subjects() {
                    if !class_matches(&self.state, i, filter) {
                        continue;
                    }
                    let ll = subject_marker_loglik(self.prepared, &self.state, i, k);
                    delta += ll - self.marker_ll[k][i];
                    self.scratch_marker.push((i, ll));
                }
            }
            if let Some(filter) = event_aff {
                for i in 0..self.prepared.n_subjects() {
                    if !class_matches(&self.state, i, filter) {
                        continue;
                    }
                    let ll = log_event_density(self.prepared, &self.state, i);
                    delta += ll - self.event_ll[i];
                    self.scratch_event.push((i, ll));
                }
            }
        }
        let accept = delta > f64::NEG_INFINITY
            && !delta.is_nan()
            && self.rngs[bid].random::<f64>().ln() < delta;
        if accept {
            if let Some((k, _)) = marker_aff {
                for &(i, ll) in &self.scratch_marker {
                    self.marker_ll[k][i] = ll;
                }
            }
            for &(i, ll) in &self.scratch_event {
                self.event_ll[i] = ll;
            }
            self.blocks[bid].accepts += 1;
        } else {
            set_block_value(&mut self.state, &kind, &old);
        }
    }

    /// Residual sum of squares and observation count for a Gaussian marker
    /// within one latent class.
    fn gaussian_sums(&self, k: usize, class: u8) -> (usize, f64) {
        let meta = &self.prepared.markers[k];
        let p = meta.n_fixed;
        let q = meta.n_random;
        let mut n = 0;
        let mut ssr = 0.0;
        for i in 0..self.prepared.n_subjects() {
            if class_of(&self.state, i) != class {
                continue;
            }
            let beta: &[f64] = if class == 0 {
                &self.state.cure.as_ref().unwrap().cured_betas[k]
            } else {
                &self.state.betas[k]
            };
            let block = self.prepared.re_block(&self.state.random_effects[i], k);
            let d = &self.prepared.subjects[i].markers[k];
            for rix in 0..d.n_obs() {
                let mut mu = 0.0;
                for j in 0..p {
                    mu += beta[j] * d.x[rix * p + j];
                }
                for j in 0..q {
                    mu += block[j] * d.z[rix * q + j];
                }
                let e = d.values[rix] - mu;
                ssr += e * e;
                n += 1;
            }
        }
        (n, ssr)
    }

    fn sigma2_gibbs(&mut self, bid: usize) {
        let prior = self.prepared.spec.priors.error_precision;
        let classes: &[u8] = if self.prepared.is_cure() { &[1, 0] } else { &[1] };
        for k in 0..self.prepared.n_markers() {
            if self.prepared.markers[k].family != MarkerFamily::Gaussian {
                continue;
            }
            for &class in classes {
                let (n, ssr) = self.gaussian_sums(k, class);
                let s2 = precision_gibbs_draw(
                    &mut self.rngs[bid],
                    prior.shape + n as f64 / 2.0,
                    prior.rate + ssr / 2.0,
                );
                if class == 0 {
                    self.state.cure.as_mut().unwrap().cured_sigma2[k] = s2;
                } else {
                    self.state.sigma2[k] = s2;
                }
                for i in 0..self.prepared.n_subjects() {
                    if class_of(&self.state, i) == class {
                        self.marker_ll[k][i] =
                            subject_marker_loglik(self.prepared, &self.state, i, k);
                    }
                }
            }
        }
    }

    /// Draws one covariance (full or per marker block) from its Wishart
    /// full conditional given the class's random-effect vectors.
    fn draw_cov(
        &mut self,
        bid: usize,
        class: u8,
    ) -> Result<DMatrix<f64>, SamplerError> {
        let nb = self.prepared.nb;
        let priors = &self.prepared.spec.priors;
        let mut s = DMatrix::zeros(nb, nb);
        let mut n = 0usize;
        for i in 0..self.prepared.n_subjects() {
            if class_of(&self.state, i) != class {
                continue;
            }
            n += 1;
            let b = &self.state.random_effects[i];
            for r in 0..nb {
                for c in 0..nb {
                    s[(r, c)] += b[r] * b[c];
                }
            }
        }
        let draw_block = |rng: &mut ChaCha12Rng, sb: DMatrix<f64>| -> Result<DMatrix<f64>, SamplerError> {
            let p = sb.nrows();
            let rate = sb + DMatrix::identity(p, p) * priors.wishart_scale;
            let dof = priors.wishart_dof.unwrap_or(p as f64) + n as f64;
            let omega = wishart_rate_draw(rng, &rate, dof)?;
            Ok(omega
                .cholesky()
                .ok_or_else(|| {
                    SamplerError::DegenerateDraw("Wishart draw not invertible".into())
                })?
                .inverse())
        };
        if self.prepared.spec.block_diagonal_re {
            let mut cov = DMatrix::zeros(nb, nb);
            for m in &self.prepared.markers {
                let d = m.random_dim;
                if d == 0 {
                    continue;
                }
                let off = m.random_offset;
                let sb = s.view((off, off), (d, d)).into_owned();
                let cb = draw_block(&mut self.rngs[bid], sb)?;
                cov.view_mut((off, off), (d, d)).copy_from(&cb);
            }
            Ok(cov)
        } else {
            draw_block(&mut self.rngs[bid], s)
        }
    }

    fn recov_gibbs(&mut self, bid: usize) -> Result<(), SamplerError> {
        if self.prepared.nb == 0 {
            return Ok(());
        }
        let cov = self.draw_cov(bid, 1)?;
        self.state.re_cov = cov;
        if self.prepared.is_cure() {
            let cov0 = self.draw_cov(bid, 0)?;
            self.state.cure.as_mut().unwrap().cured_re_cov = cov0;
        }
        self.refresh_chols()?;
        for i in 0..self.prepared.n_subjects() {
            self.re_ll[i] = subject_re_loglik(self.prepared, &self.state, i);
        }
        Ok(())
    }

    fn tau_gibbs(&mut self, bid: usize) {
        let prior = self.prepared.spec.priors.spline_smoothing;
        for l in 0..self.prepared.n_causes() {
            let cause = &self.prepared.causes[l];
            let Some(psi) = &cause.penalty else { continue };
            let BaselineParams::BSpline { coefficients, .. } = &self.state.causes[l].baseline
            else {
                continue;
            };
            let nb = coefficients.len();
            let mut q = 0.0;
            for r in 0..nb {
                for c in 0..nb {
                    q += coefficients[r] * psi[(r, c)] * coefficients[c];
                }
            }
            let tau = gamma_draw(
                &mut self.rngs[bid],
                prior.shape + cause.penalty_rank as f64 / 2.0,
                prior.rate + q / 2.0,
            );
            if let BaselineParams::BSpline { smoothing, .. } =
                &mut self.state.causes[l].baseline
            {
                *smoothing = tau;
            }
        }
    }

    fn refresh_subject(&mut self, i: usize) {
        for k in 0..self.prepared.n_markers() {
            self.marker_ll[k][i] = subject_marker_loglik(self.prepared, &self.state, i, k);
        }
        self.event_ll[i] = log_event_density(self.prepared, &self.state, i);
        self.re_ll[i] = subject_re_loglik(self.prepared, &self.state, i);
    }

    /// Exact Gibbs flips of the latent cure classes. Event subjects are
    /// pinned susceptible and zero-tail subjects pinned cured, so only
    /// interior censored subjects move. A flip invalidates the subject's
    /// caches and triggers one extra random-effect refresh move.
    fn cure_flips(&mut self, bid: usize) {
        for i in 0..self.prepared.n_subjects() {
            let subj = &self.prepared.subjects[i];
            if subj.status != 0 || subj.zero_tail {
                continue;
            }
            let log_odds = cure_susceptible_log_odds(self.prepared, &mut self.state, i);
            let p1 = 1.0 / (1.0 + (-log_odds).exp());
            let new_class = u8::from(self.rngs[bid].random::<f64>() < p1);
            let old_class = class_of(&self.state, i);
            if new_class != old_class {
                self.state.cure.as_mut().unwrap().classes[i] = new_class;
                self.refresh_subject(i);
                if let Some(rbid) = self.subject_re_block {
                    self.re_update_one(i, rbid);
                }
            }
        }
    }

    /// Accumulate the block draws that feed the empirical proposal
    /// covariances (burn-in only).
    pub(super) fn welford_push(&mut self) {
        for bid in 0..self.blocks.len() {
            if self.blocks[bid].gibbs || !self.blocks[bid].kind.learns_covariance() {
                continue;
            }
            let kind = self.blocks[bid].kind.clone();
            let x = block_value(&self.state, &kind);
            let blk = &mut self.blocks[bid];
            blk.count += 1;
            let nf = blk.count as f64;
            // Welford: m2 accumulates (x - mean_pre) (x - mean_post)'.
            let pre: Vec<f64> = (0..blk.dim).map(|r| x[r] - blk.mean[r]).collect();
            for r in 0..blk.dim {
                blk.mean[r] += pre[r] / nf;
            }
            for r in 0..blk.dim {
                let post_r = x[r] - blk.mean[r];
                for c in 0..blk.dim {
                    blk.m2[(r, c)] += pre[c] * post_r;
                }
            }
        }
    }

    /// Robbins-Monro step on every Metropolis block's log scale, plus a
    /// refresh of the learned proposal covariances. Called at window
    /// boundaries during burn-in only; scales are frozen afterwards.
    pub(super) fn adapt(&mut self) {
        for blk in &mut self.blocks {
            if blk.gibbs || blk.attempts == 0 {
                continue;
            }
            blk.windows += 1;
            let rate = blk.accepts as f64 / blk.attempts as f64;
            let eta = (blk.windows as f64).powf(-0.6);
            blk.log_scale += eta * (rate - blk.target);
            blk.accepts = 0;
            blk.attempts = 0;
            if blk.kind.learns_covariance() && blk.count as usize >= 10 + 2 * blk.dim {
                let mut cov = &blk.m2 / (blk.count as f64 - 1.0);
                for d in 0..blk.dim {
                    cov[(d, d)] += PROPOSAL_RIDGE;
                }
                if let Some(ch) = cov.cholesky() {
                    if blk.prop_chol.is_none() {
                        // Switching from the unit proposal to the learned
                        // shape: restart the scale at the standard optimum.
                        blk.log_scale = (2.38 / (blk.dim as f64).sqrt()).ln();
                    }
                    blk.prop_chol = Some(ch.l());
                }
            }
        }
    }

    pub(super) fn reset_counters(&mut self) {
        for blk in &mut self.blocks {
            blk.accepts = 0;
            blk.attempts = 0;
        }
    }

    pub(super) fn check_divergence(&self, iteration: usize) -> Result<(), SamplerError> {
        if self.total_log_posterior().is_finite() {
            Ok(())
        } else {
            Err(SamplerError::ChainDiverged {
                chain: self.chain,
                iteration,
            })
        }
    }

    pub(super) fn extract_row(&self, monitors: &[MonitorEntry], out: &mut Vec<f64>) {
        for m in monitors {
            out.push(extract(&self.state, &m.extract));
        }
    }

    pub(super) fn block_stats(&self) -> Vec<BlockStats> {
        self.blocks
            .iter()
            .filter(|b| !b.gibbs)
            .map(|b| BlockStats {
                label: b.label.clone(),
                acceptance: b.accepts as f64 / b.attempts.max(1) as f64,
                scale: b.log_scale.exp(),
            })
            .collect()
    }

}

pub(super) fn run_chain(
    prepared: &PreparedModel,
    cfg: &McmcConfig,
    chain: usize,
    monitors: &[MonitorEntry],
) -> Result<ChainOutput, SamplerError> {
    let start = std::time::Instant::now();
    let mut run = ChainRun::new(prepared, cfg, chain)?;
    let n_keep = (cfg.iterations - cfg.burnin) / cfg.thin;
    let mut draws = Vec::with_capacity(n_keep * monitors.len());
    let mut n_retained = 0;
    for it in 0..cfg.iterations {
        if it == cfg.burnin {
            run.reset_counters();
        }
        run.sweep()?;
        if it < cfg.burnin {
            run.welford_push();
        }
        if (it + 1) % cfg.adapt_window == 0 {
            run.check_divergence(it)?;
            if it < cfg.burnin {
                run.adapt();
            }
        }
        if it >= cfg.burnin && (it - cfg.burnin + 1) % cfg.thin == 0 {
            run.extract_row(monitors, &mut draws);
            n_retained += 1;
        }
    }
    Ok(ChainOutput {
        chain,
        names: monitors.iter().map(|m| m.name.clone()).collect(),
        draws,
        n_retained,
        blocks: run.block_stats(),
        seed: cfg.seed,
        elapsed_ms: start.elapsed().as_millis() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CauseParams, HurdleParams};
    use nalgebra::dmatrix;

    fn hurdle_state() -> ParamState {
        ParamState {
            betas: vec![vec![0.3, -0.2]],
            sigma2: vec![1.0],
            hurdles: vec![Some(HurdleParams {
                probability_coefficients: vec![0.4, 0.1],
                dispersion: 1.7,
            })],
            re_cov: dmatrix![1.0, 0.2; 0.2, 0.5],
            random_effects: vec![],
            causes: vec![CauseParams {
                alpha: vec![-0.5, 0.2],
                gammas: vec![vec![0.6, -0.3]],
                baseline: BaselineParams::PiecewiseConstant {
                    heights: vec![0.5, 1.5, 0.8],
                },
            }],
            cure: None,
        }
    }

    #[test]
    fn block_values_round_trip() {
        let mut state = hurdle_state();
        for kind in [
            BlockKind::Beta { k: 0 },
            BlockKind::BetaProb { k: 0 },
            BlockKind::AlphaGamma { cause: 0 },
            BlockKind::LogHeights { cause: 0 },
            BlockKind::LogDispersion { k: 0 },
        ] {
            let v = block_value(&state, &kind);
            let bumped: Vec<f64> = v.iter().map(|x| x + 0.25).collect();
            set_block_value(&mut state, &kind, &bumped);
            let got = block_value(&state, &kind);
            for (a, b) in got.iter().zip(&bumped) {
                assert!((a - b).abs() < 1e-12, "{kind:?}: {a} vs {b}");
            }
            set_block_value(&mut state, &kind, &v);
        }
        // Log-scale blocks really store exponentiated values.
        set_block_value(&mut state, &BlockKind::LogDispersion { k: 0 }, &[0.0]);
        assert_eq!(state.hurdles[0].as_ref().unwrap().dispersion, 1.0);
    }

    #[test]
    fn alpha_gamma_vector_is_alpha_then_gammas() {
        let state = hurdle_state();
        let v = block_value(&state, &BlockKind::AlphaGamma { cause: 0 });
        assert_eq!(v, vec![-0.5, 0.2, 0.6, -0.3]);
    }
}
