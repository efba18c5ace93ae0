//! Resolves a (spec, dataset) pair into flat per-subject structures the
//! likelihood and sampler can walk without string lookups: design rows,
//! event covariate vectors, cached quadrature grids, cached spline bases.

use crate::hazard::{BaselineModel, SplineBasis};
use crate::quadrature::{scale_to_interval, QuadratureRule};
use nalgebra::DMatrix;

use super::dataset::Dataset;
use super::spec::{
    AssociationKind, BaselineHazardSpec, EventStructure, MarkerFamily, MarkerSpec, ModelSpec,
    INTERCEPT_COLUMN, TIME_COLUMN,
};
use super::validate::validate_spec;
use super::ModelError;

/// Per-marker shape metadata shared by all subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedMarker {
    pub name: String,
    pub family: MarkerFamily,
    pub association: AssociationKind,
    pub n_fixed: usize,
    /// Mean-model random design columns.
    pub n_random: usize,
    /// Random-effect block size (adds the zero-probability intercept for
    /// hurdle markers).
    pub random_dim: usize,
    /// Start of this marker's block inside the stacked random effects.
    pub random_offset: usize,
    pub n_prob: usize,
    pub gamma_dim: usize,
    /// Whether the association reads the fitted trajectory (anything but
    /// shared random effects), so changing beta moves the hazard.
    pub uses_trajectory: bool,
}

/// Per-cause event model pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCause {
    pub baseline: BaselineModel,
    /// Event design starts with an implicit intercept column.
    pub has_intercept: bool,
    pub n_alpha: usize,
    /// Difference penalty for spline baselines.
    pub penalty: Option<DMatrix<f64>>,
    pub penalty_rank: usize,
    /// Log pseudo-determinant of the penalty (product of nonzero
    /// eigenvalues), a fixed constant of the smoothness prior.
    pub penalty_pseudo_logdet: f64,
}

/// One marker's observations for one subject, design already expanded.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MarkerDesign {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Row-major n_obs x n_fixed.
    pub x: Vec<f64>,
    /// Row-major n_obs x n_random.
    pub z: Vec<f64>,
    /// Row-major n_obs x n_prob (hurdle only).
    pub xp: Vec<f64>,
    /// log of the offset column (hurdle only, empty when unspecified).
    pub log_offset: Vec<f64>,
    /// Subject-constant part of each fixed column (time column: 0).
    pub x_const: Vec<f64>,
    /// 1.0 where the fixed column is the time column.
    pub x_time: Vec<f64>,
    pub z_const: Vec<f64>,
    pub z_time: Vec<f64>,
}

impl MarkerDesign {
    pub fn n_obs(&self) -> usize {
        self.times.len()
    }
}

/// One subject, fully resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSubject {
    pub id: String,
    pub event_time: f64,
    pub status: usize,
    /// Censored after every observed event: under the cure structure these
    /// subjects are pinned to the cured class.
    pub zero_tail: bool,
    /// Event design per cause (leading 1 when has_intercept).
    pub w: Vec<Vec<f64>>,
    /// Incidence design (leading 1), cure structure only.
    pub w_incidence: Vec<f64>,
    pub markers: Vec<MarkerDesign>,
    /// Quadrature grid scaled to [0, event_time].
    pub quad_nodes: Vec<f64>,
    pub quad_weights: Vec<f64>,
    pub quad_log_nodes: Vec<f64>,
    /// Per cause: spline basis at the event time (empty for non-spline).
    pub spline_at_event: Vec<Vec<f64>>,
    /// Per cause: node-major basis values, n_nodes x n_basis (flat).
    pub spline_at_nodes: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedModel {
    pub spec: ModelSpec,
    pub markers: Vec<PreparedMarker>,
    pub causes: Vec<PreparedCause>,
    pub subjects: Vec<PreparedSubject>,
    /// Total stacked random-effect dimension.
    pub nb: usize,
    pub max_observed_event_time: Option<f64>,
    pub dropped_rows: usize,
}

impl PreparedModel {
    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_markers(&self) -> usize {
        self.markers.len()
    }

    pub fn n_causes(&self) -> usize {
        self.causes.len()
    }

    pub fn is_cure(&self) -> bool {
        self.spec.event.structure == EventStructure::MixtureCure
    }

    /// Random-effect block of marker `k` inside a stacked vector.
    pub fn re_block<'a>(&self, b: &'a [f64], k: usize) -> &'a [f64] {
        let m = &self.markers[k];
        &b[m.random_offset..m.random_offset + m.random_dim]
    }
}

#[derive(Clone, Copy)]
enum Col {
    Intercept,
    Time,
    Covariate(usize),
}

fn resolve_cols(names: &[String], long_covariates: &[String]) -> Result<Vec<Col>, ModelError> {
    names
        .iter()
        .map(|n| {
            if n == INTERCEPT_COLUMN {
                Ok(Col::Intercept)
            } else if n == TIME_COLUMN {
                Ok(Col::Time)
            } else {
                long_covariates
                    .iter()
                    .position(|h| h == n)
                    .map(Col::Covariate)
                    .ok_or_else(|| ModelError::MissingColumn {
                        table: "long".into(),
                        column: n.clone(),
                    })
            }
        })
        .collect()
}

fn col_value(col: Col, time: f64, covariates: &[f64]) -> f64 {
    match col {
        Col::Intercept => 1.0,
        Col::Time => time,
        Col::Covariate(i) => covariates[i],
    }
}

fn build_baseline(
    spec: &BaselineHazardSpec,
    event_times: &[f64],
) -> (BaselineModel, Option<DMatrix<f64>>, usize) {
    match spec {
        BaselineHazardSpec::Constant => (BaselineModel::Constant, None, 0),
        BaselineHazardSpec::Weibull => (BaselineModel::Weibull, None, 0),
        BaselineHazardSpec::PiecewiseConstant { knots } => (
            BaselineModel::Piecewise {
                knots: knots.clone(),
            },
            None,
            0,
        ),
        BaselineHazardSpec::BSpline {
            degree,
            interior_knots,
            penalty_order,
        } => {
            let basis = SplineBasis::from_event_times(*degree, *interior_knots, event_times);
            let l = basis.n_basis();
            let penalty = crate::hazard::penalty_matrix(l, *penalty_order);
            let rank = l - penalty_order.min(&l);
            (
                BaselineModel::Spline {
                    basis,
                    penalty_order: *penalty_order,
                },
                Some(penalty),
                rank,
            )
        }
    }
}

fn marker_needs_const(kind: AssociationKind) -> bool {
    kind != AssociationKind::SharedRandomEffects
}

fn build_marker_design(
    m: &MarkerSpec,
    kind: AssociationKind,
    fixed_cols: &[Col],
    random_cols: &[Col],
    prob_cols: &[Col],
    offset_col: Option<Col>,
    subject: &super::dataset::SubjectData,
    marker_index: usize,
) -> Result<MarkerDesign, ModelError> {
    let mut d = MarkerDesign::default();
    for row in &subject.rows {
        let Some(y) = row.values[marker_index] else {
            continue;
        };
        d.times.push(row.time);
        d.values.push(y);
        for &c in fixed_cols {
            d.x.push(col_value(c, row.time, &row.covariates));
        }
        for &c in random_cols {
            d.z.push(col_value(c, row.time, &row.covariates));
        }
        for &c in prob_cols {
            d.xp.push(col_value(c, row.time, &row.covariates));
        }
        if let Some(c) = offset_col {
            let v = col_value(c, row.time, &row.covariates);
            if !(v > 0.0 && v.is_finite()) {
                return Err(ModelError::InvalidSubject {
                    subject: subject.id.clone(),
                    message: format!("offset for `{}` must be positive, got {v}", m.name),
                });
            }
            d.log_offset.push(v.ln());
        }
    }
    for rowvals in d
        .x
        .iter()
        .chain(d.z.iter())
        .chain(d.xp.iter())
        .chain(d.values.iter())
    {
        if rowvals.is_nan() {
            return Err(ModelError::InvalidSubject {
                subject: subject.id.clone(),
                message: format!("missing covariate value in the `{}` design", m.name),
            });
        }
    }
    // Affine-in-time view of the design, used by the trajectory
    // associations. Covariate values come from the first longitudinal row
    // (validation enforces subject-constancy whenever this view is used).
    let first_cov = subject.rows.first().map(|r| r.covariates.as_slice());
    let needs = marker_needs_const(kind);
    let affine = |cols: &[Col], consts: &mut Vec<f64>, times: &mut Vec<f64>| {
        for &c in cols {
            match c {
                Col::Intercept => {
                    consts.push(1.0);
                    times.push(0.0);
                }
                Col::Time => {
                    consts.push(0.0);
                    times.push(1.0);
                }
                Col::Covariate(i) => {
                    let v = first_cov.map_or(f64::NAN, |cv| cv[i]);
                    consts.push(v);
                    times.push(0.0);
                }
            }
        }
    };
    affine(fixed_cols, &mut d.x_const, &mut d.x_time);
    affine(random_cols, &mut d.z_const, &mut d.z_time);
    if needs && d.x_const.iter().chain(d.z_const.iter()).any(|v| v.is_nan()) {
        return Err(ModelError::InvalidSubject {
            subject: subject.id.clone(),
            message: format!(
                "cannot resolve the `{}` trajectory: no longitudinal rows carry its covariates",
                m.name
            ),
        });
    }
    Ok(d)
}

/// Resolves `spec` against `data`. Validation failures abort; the returned
/// model owns everything the sampler touches per iteration.
pub fn prepare(
    spec: &ModelSpec,
    data: &Dataset,
    rule: &QuadratureRule,
) -> Result<PreparedModel, ModelError> {
    let report = validate_spec(spec, data);
    if !report.is_ok() {
        return Err(ModelError::Invalid(report));
    }

    let offsets = spec.random_offsets();
    let markers: Vec<PreparedMarker> = spec
        .markers
        .iter()
        .zip(&spec.associations)
        .zip(&offsets)
        .map(|((m, &kind), &off)| PreparedMarker {
            name: m.name.clone(),
            family: m.family,
            association: kind,
            n_fixed: m.fixed.len(),
            n_random: m.random.len(),
            random_dim: m.random_dim(),
            random_offset: off,
            n_prob: m.probability_design.len(),
            gamma_dim: kind.coefficient_dim(m.random_dim()),
            uses_trajectory: marker_needs_const(kind),
        })
        .collect();

    let observed_events: Vec<f64> = data
        .subjects
        .iter()
        .filter(|s| s.status > 0)
        .map(|s| s.event_time)
        .collect();
    let causes: Vec<PreparedCause> = spec
        .event
        .baselines
        .iter()
        .map(|b| {
            let (baseline, penalty, penalty_rank) = build_baseline(b, &observed_events);
            let has_intercept = baseline.has_event_intercept();
            let penalty_pseudo_logdet = penalty.as_ref().map_or(0.0, |p| {
                let eig = p.symmetric_eigenvalues();
                let tol = 1e-10 * eig.amax().max(1.0);
                eig.iter().filter(|&&e| e > tol).map(|e| e.ln()).sum()
            });
            PreparedCause {
                n_alpha: usize::from(has_intercept) + spec.event.covariates.len(),
                baseline,
                has_intercept,
                penalty,
                penalty_rank,
                penalty_pseudo_logdet,
            }
        })
        .collect();

    let fixed_cols: Vec<Vec<Col>> = spec
        .markers
        .iter()
        .map(|m| resolve_cols(&m.fixed, &data.long_covariates))
        .collect::<Result<_, _>>()?;
    let random_cols: Vec<Vec<Col>> = spec
        .markers
        .iter()
        .map(|m| resolve_cols(&m.random, &data.long_covariates))
        .collect::<Result<_, _>>()?;
    let prob_cols: Vec<Vec<Col>> = spec
        .markers
        .iter()
        .map(|m| resolve_cols(&m.probability_design, &data.long_covariates))
        .collect::<Result<_, _>>()?;
    let offset_cols: Vec<Option<Col>> = spec
        .markers
        .iter()
        .map(|m| {
            m.offset
                .as_ref()
                .map(|o| Ok(resolve_cols(std::slice::from_ref(o), &data.long_covariates)?[0]))
                .transpose()
        })
        .collect::<Result<_, _>>()?;
    let event_cov_idx: Vec<usize> = spec
        .event
        .covariates
        .iter()
        .map(|c| {
            data.surv_covariates
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| ModelError::MissingColumn {
                    table: "surv".into(),
                    column: c.clone(),
                })
        })
        .collect::<Result<_, _>>()?;
    let incidence_cov_idx: Vec<usize> = spec
        .event
        .incidence_covariates
        .iter()
        .map(|c| {
            data.surv_covariates
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| ModelError::MissingColumn {
                    table: "surv".into(),
                    column: c.clone(),
                })
        })
        .collect::<Result<_, _>>()?;

    let max_event = data.max_observed_event_time();
    let mut subjects = Vec::with_capacity(data.subjects.len());
    for s in &data.subjects {
        let mut designs = Vec::with_capacity(spec.markers.len());
        for (k, m) in spec.markers.iter().enumerate() {
            designs.push(build_marker_design(
                m,
                spec.associations[k],
                &fixed_cols[k],
                &random_cols[k],
                &prob_cols[k],
                offset_cols[k],
                s,
                k,
            )?);
        }
        let mut w = Vec::with_capacity(causes.len());
        for c in &causes {
            let mut wv = Vec::with_capacity(c.n_alpha);
            if c.has_intercept {
                wv.push(1.0);
            }
            for &ci in &event_cov_idx {
                let v = s.covariates[ci];
                if v.is_nan() {
                    return Err(ModelError::InvalidSubject {
                        subject: s.id.clone(),
                        message: format!(
                            "missing event covariate `{}`",
                            spec.event.covariates[event_cov_idx.iter().position(|&x| x == ci).unwrap()]
                        ),
                    });
                }
                wv.push(v);
            }
            w.push(wv);
        }
        let mut w_incidence = Vec::new();
        if spec.event.structure == EventStructure::MixtureCure {
            w_incidence.push(1.0);
            for &ci in &incidence_cov_idx {
                let v = s.covariates[ci];
                if v.is_nan() {
                    return Err(ModelError::InvalidSubject {
                        subject: s.id.clone(),
                        message: "missing incidence covariate".into(),
                    });
                }
                w_incidence.push(v);
            }
        }
        let scaled = scale_to_interval(rule, 0.0, s.event_time).map_err(|e| {
            ModelError::InvalidSubject {
                subject: s.id.clone(),
                message: format!("cannot build hazard quadrature grid: {e}"),
            }
        })?;
        let quad_log_nodes = scaled.nodes.iter().map(|&x| x.max(1e-300).ln()).collect();
        let mut spline_at_event = vec![Vec::new(); causes.len()];
        let mut spline_at_nodes = vec![Vec::new(); causes.len()];
        for (l, c) in causes.iter().enumerate() {
            if let BaselineModel::Spline { basis, .. } = &c.baseline {
                spline_at_event[l] = basis.eval(s.event_time);
                let mut flat = Vec::with_capacity(scaled.nodes.len() * basis.n_basis());
                for &x in &scaled.nodes {
                    flat.extend(basis.eval(x));
                }
                spline_at_nodes[l] = flat;
            }
        }
        subjects.push(PreparedSubject {
            id: s.id.clone(),
            event_time: s.event_time,
            status: s.status,
            zero_tail: s.status == 0 && max_event.is_some_and(|m| s.event_time > m),
            w,
            w_incidence,
            markers: designs,
            quad_nodes: scaled.nodes,
            quad_weights: scaled.weights,
            quad_log_nodes,
            spline_at_event,
            spline_at_nodes,
        });
    }

    Ok(PreparedModel {
        spec: spec.clone(),
        markers,
        causes,
        subjects,
        nb: spec.random_dim(),
        max_observed_event_time: max_event,
        dropped_rows: data.dropped_post_event_rows,
    })
}
