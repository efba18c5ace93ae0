//! Up-front checks of a model specification against a dataset. Everything
//! that would otherwise surface as a cryptic failure deep inside the
//! sampler gets collected into one report here.

use std::fmt;

use super::dataset::Dataset;
use super::spec::{
    AssociationKind, BaselineHazardSpec, EventStructure, MarkerFamily, ModelSpec,
    INTERCEPT_COLUMN, TIME_COLUMN,
};

/// A single violated requirement, with enough context to locate it.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationIssue {
    /// Where the problem lives, e.g. `markers[0].random` or `subject 17`.
    pub location: String,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

/// Sizes resolved from a (spec, dataset) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedDims {
    pub n_subjects: usize,
    /// Longitudinal rows per subject, post ingestion-time drops.
    pub rows_per_subject: Vec<usize>,
    pub n_markers: usize,
    pub n_causes: usize,
    /// Total random-effect dimension across markers.
    pub random_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
    pub dims: ResolvedDims,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "specification valid");
        }
        writeln!(f, "{} validation issue(s):", self.issues.len())?;
        for issue in &self.issues {
            writeln!(f, "  - {issue}")?;
        }
        Ok(())
    }
}

struct Checker<'a> {
    spec: &'a ModelSpec,
    data: &'a Dataset,
    issues: Vec<ValidationIssue>,
}

impl Checker<'_> {
    fn push(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.issues.push(ValidationIssue {
            location: location.into(),
            message: message.into(),
        });
    }

    fn check_design_columns(&mut self, location: String, columns: &[String]) {
        for c in columns {
            if c == INTERCEPT_COLUMN || c == TIME_COLUMN {
                continue;
            }
            if !self.data.long_covariates.iter().any(|h| h == c) {
                self.push(
                    location.clone(),
                    format!("column `{c}` not found among longitudinal covariates"),
                );
            }
        }
    }

    fn spec_checks(&mut self) {
        let spec = self.spec;
        if spec.markers.is_empty() {
            self.push("markers", "at least one marker is required");
        }
        if spec.associations.len() != spec.markers.len() {
            self.push(
                "associations",
                format!(
                    "expected one association per marker ({}), got {}",
                    spec.markers.len(),
                    spec.associations.len()
                ),
            );
        }
        for (k, m) in spec.markers.iter().enumerate() {
            let loc = format!("markers[{k}] ({})", m.name);
            if m.fixed.is_empty() {
                self.push(loc.clone(), "fixed design must be non-empty");
            }
            for r in &m.random {
                if !m.fixed.contains(r) {
                    self.push(
                        loc.clone(),
                        format!("random column `{r}` must also appear in the fixed design"),
                    );
                }
            }
            match m.family {
                MarkerFamily::HurdleNegBinomial => {
                    if m.probability_design.is_empty() {
                        self.push(
                            loc.clone(),
                            "hurdle marker needs a zero-probability design",
                        );
                    }
                    if let Some(kind) = spec.associations.get(k) {
                        if *kind != AssociationKind::SharedRandomEffects {
                            self.push(
                                loc.clone(),
                                "hurdle markers only support the shared random effects association",
                            );
                        }
                    }
                }
                _ => {
                    if !m.probability_design.is_empty() {
                        self.push(
                            loc.clone(),
                            "zero-probability design is only meaningful for hurdle markers",
                        );
                    }
                    if m.offset.is_some() {
                        self.push(loc.clone(), "offsets are only supported for hurdle markers");
                    }
                }
            }
        }
        let n_causes = spec.event.structure.n_causes();
        if spec.event.baselines.len() != n_causes {
            self.push(
                "event.baselines",
                format!(
                    "expected {} baseline(s) for this event structure, got {}",
                    n_causes,
                    spec.event.baselines.len()
                ),
            );
        }
        if let EventStructure::CompetingRisks { causes } = spec.event.structure {
            if causes < 2 {
                self.push("event.structure", "competing risks needs at least 2 causes");
            }
        }
        if spec.event.structure == EventStructure::MixtureCure {
            for (k, m) in spec.markers.iter().enumerate() {
                if m.family != MarkerFamily::Gaussian {
                    self.push(
                        format!("markers[{k}] ({})", m.name),
                        "cure models only support Gaussian markers",
                    );
                }
            }
        } else if !spec.event.incidence_covariates.is_empty() {
            self.push(
                "event.incidence_covariates",
                "incidence covariates only apply to the cure structure",
            );
        }
        for (l, b) in spec.event.baselines.iter().enumerate() {
            let loc = format!("event.baselines[{l}]");
            match b {
                BaselineHazardSpec::PiecewiseConstant { knots } => {
                    if knots.is_empty() {
                        self.push(loc, "needs at least one interior knot");
                    } else if knots[0] <= 0.0
                        || knots.windows(2).any(|w| w[1] <= w[0])
                        || knots.iter().any(|k| !k.is_finite())
                    {
                        self.push(loc, "knots must be finite, positive, strictly increasing");
                    }
                }
                BaselineHazardSpec::BSpline {
                    degree,
                    interior_knots,
                    penalty_order,
                } => {
                    if *degree == 0 {
                        self.push(loc.clone(), "spline degree must be at least 1");
                    }
                    if *interior_knots == 0 {
                        self.push(loc.clone(), "needs at least one interior knot");
                    }
                    if !(1..=3).contains(penalty_order) {
                        self.push(loc, "penalty order must be 1, 2, or 3");
                    }
                }
                _ => {}
            }
        }
        let p = &spec.priors;
        for (name, v) in [
            ("coefficients.variance", p.coefficients.variance),
            ("error_precision.shape", p.error_precision.shape),
            ("error_precision.rate", p.error_precision.rate),
            ("wishart_scale", p.wishart_scale),
            ("weibull_shape.shape", p.weibull_shape.shape),
            ("weibull_shape.rate", p.weibull_shape.rate),
            ("hazard_heights.shape", p.hazard_heights.shape),
            ("hazard_heights.rate", p.hazard_heights.rate),
            ("spline_smoothing.shape", p.spline_smoothing.shape),
            ("spline_smoothing.rate", p.spline_smoothing.rate),
            ("spline_ridge_precision", p.spline_ridge_precision),
            ("dispersion.shape", p.dispersion.shape),
            ("dispersion.rate", p.dispersion.rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                self.push(format!("priors.{name}"), "must be positive and finite");
            }
        }
    }

    fn data_checks(&mut self) {
        let spec = self.spec;
        let data = self.data;
        for (k, m) in spec.markers.iter().enumerate() {
            let loc = format!("markers[{k}] ({})", m.name);
            self.check_design_columns(format!("{loc}.fixed"), &m.fixed);
            self.check_design_columns(format!("{loc}.random"), &m.random);
            self.check_design_columns(format!("{loc}.probability_design"), &m.probability_design);
            if let Some(off) = &m.offset {
                self.check_design_columns(format!("{loc}.offset"), std::slice::from_ref(off));
            }
        }
        for c in spec
            .event
            .covariates
            .iter()
            .chain(&spec.event.incidence_covariates)
        {
            if !data.surv_covariates.iter().any(|h| h == c) {
                self.push(
                    "event.covariates",
                    format!("column `{c}` not found among survival covariates"),
                );
            }
        }

        let n_causes = spec.event.structure.n_causes();
        let cure = spec.event.structure == EventStructure::MixtureCure;
        let mut seen_any = vec![false; spec.markers.len()];
        for s in &data.subjects {
            let loc = format!("subject {}", s.id);
            if !(s.event_time > 0.0 && s.event_time.is_finite()) {
                self.push(loc.clone(), "event time must be positive and finite");
            }
            let max_status = if cure { 1 } else { n_causes };
            if s.status > max_status {
                self.push(
                    loc.clone(),
                    format!("status {} out of range 0..={max_status}", s.status),
                );
            }
            for (k, m) in spec.markers.iter().enumerate() {
                let mut prev_time = f64::NEG_INFINITY;
                for row in &s.rows {
                    let Some(y) = row.values[k] else { continue };
                    seen_any[k] = true;
                    if row.time == prev_time {
                        self.push(
                            loc.clone(),
                            format!("duplicate observation of `{}` at time {}", m.name, row.time),
                        );
                    }
                    prev_time = row.time;
                    match m.family {
                        MarkerFamily::Bernoulli => {
                            if y != 0.0 && y != 1.0 {
                                self.push(
                                    loc.clone(),
                                    format!("`{}` must be 0/1, got {y} at time {}", m.name, row.time),
                                );
                            }
                        }
                        MarkerFamily::HurdleNegBinomial => {
                            if y < 0.0 || y.fract() != 0.0 {
                                self.push(
                                    loc.clone(),
                                    format!(
                                        "`{}` must be a nonnegative count, got {y} at time {}",
                                        m.name, row.time
                                    ),
                                );
                            }
                        }
                        MarkerFamily::Gaussian => {
                            if !y.is_finite() {
                                self.push(
                                    loc.clone(),
                                    format!("`{}` non-finite at time {}", m.name, row.time),
                                );
                            }
                        }
                    }
                }
            }
            // Covariate columns feeding a trajectory-based association must
            // be constant within subject, otherwise the fitted trajectory is
            // not the affine-in-time function the hazard terms assume.
            for (k, m) in spec.markers.iter().enumerate() {
                let Some(kind) = spec.associations.get(k) else {
                    continue;
                };
                if *kind == AssociationKind::SharedRandomEffects {
                    continue;
                }
                for c in m.fixed.iter().chain(&m.random) {
                    if c == INTERCEPT_COLUMN || c == TIME_COLUMN {
                        continue;
                    }
                    let Some(ci) = data.long_covariates.iter().position(|h| h == c) else {
                        continue;
                    };
                    let mut first: Option<f64> = None;
                    for row in &s.rows {
                        let v = row.covariates[ci];
                        match first {
                            None => first = Some(v),
                            Some(f) if f != v => {
                                self.push(
                                    loc.clone(),
                                    format!(
                                        "column `{c}` varies over time but feeds the `{}` trajectory association",
                                        m.name
                                    ),
                                );
                                break;
                            }
                            _ => {}
                        }
                    }
                }
            }
        }
        if !data.subjects.is_empty() {
            for (k, seen) in seen_any.iter().enumerate() {
                if !seen {
                    self.push(
                        format!("markers[{k}] ({})", spec.markers[k].name),
                        "no observations anywhere in the dataset",
                    );
                }
            }
        }
    }
}

/// Checks `spec` against `data` and returns every violation found.
pub fn validate_spec(spec: &ModelSpec, data: &Dataset) -> ValidationReport {
    let mut checker = Checker {
        spec,
        data,
        issues: vec![],
    };
    checker.spec_checks();
    checker.data_checks();
    let dims = ResolvedDims {
        n_subjects: data.subjects.len(),
        rows_per_subject: data.subjects.iter().map(|s| s.rows.len()).collect(),
        n_markers: spec.markers.len(),
        n_causes: spec.event.structure.n_causes(),
        random_dim: spec.random_dim(),
    };
    ValidationReport {
        issues: checker.issues,
        dims,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::dataset::{MarkerSeries, SubjectData};
    use crate::model::spec::{EventSpec, MarkerSpec, PriorSet};

    fn gaussian_spec() -> ModelSpec {
        ModelSpec {
            markers: vec![MarkerSpec {
                name: "y".into(),
                family: MarkerFamily::Gaussian,
                fixed: vec!["intercept".into(), "time".into(), "x1".into()],
                random: vec!["intercept".into(), "time".into()],
                offset: None,
                probability_design: vec![],
            }],
            associations: vec![AssociationKind::CurrentValue],
            event: EventSpec {
                structure: EventStructure::SingleEvent,
                baselines: vec![BaselineHazardSpec::Constant],
                covariates: vec!["w1".into()],
                incidence_covariates: vec![],
            },
            priors: PriorSet::default(),
            block_diagonal_re: false,
        }
    }

    fn small_data() -> Dataset {
        Dataset::new(
            vec!["y".into()],
            vec!["x1".into()],
            vec!["w1".into()],
            vec![SubjectData {
                id: "1".into(),
                event_time: 2.0,
                status: 1,
                covariates: vec![0.4],
                rows: vec![
                    MarkerSeries {
                        time: 0.0,
                        covariates: vec![1.0],
                        values: vec![Some(0.5)],
                    },
                    MarkerSeries {
                        time: 1.0,
                        covariates: vec![1.0],
                        values: vec![Some(0.9)],
                    },
                ],
            }],
        )
    }

    #[test]
    fn valid_pair_passes() {
        let report = validate_spec(&gaussian_spec(), &small_data());
        assert!(report.is_ok(), "{report}");
        assert_eq!(report.dims.random_dim, 2);
        assert_eq!(report.dims.rows_per_subject, vec![2]);
    }

    #[test]
    fn random_not_subset_of_fixed_flagged() {
        let mut spec = gaussian_spec();
        spec.markers[0].random = vec!["x9".into()];
        let report = validate_spec(&spec, &small_data());
        assert!(report
            .issues
            .iter()
            .any(|i| i.message.contains("must also appear in the fixed design")));
    }

    #[test]
    fn missing_columns_flagged() {
        let mut spec = gaussian_spec();
        spec.markers[0].fixed.push("nope".into());
        spec.event.covariates.push("missing_w".into());
        let report = validate_spec(&spec, &small_data());
        assert_eq!(
            report
                .issues
                .iter()
                .filter(|i| i.message.contains("not found"))
                .count(),
            2,
            "{report}"
        );
    }

    #[test]
    fn trajectory_association_requires_constant_covariates() {
        let spec = gaussian_spec();
        let mut data = small_data();
        data.subjects[0].rows[1].covariates[0] = 2.0;
        let report = validate_spec(&spec, &data);
        assert!(report
            .issues
            .iter()
            .any(|i| i.message.contains("varies over time")));
        // Shared random effects place no constraint on the design columns.
        let mut spec2 = gaussian_spec();
        spec2.associations = vec![AssociationKind::SharedRandomEffects];
        assert!(validate_spec(&spec2, &data).is_ok());
    }

    #[test]
    fn hurdle_needs_shared_random_effects() {
        let mut spec = gaussian_spec();
        spec.markers[0].family = MarkerFamily::HurdleNegBinomial;
        spec.markers[0].probability_design = vec!["intercept".into()];
        let mut data = small_data();
        for row in &mut data.subjects[0].rows {
            row.values[0] = Some(3.0);
        }
        let report = validate_spec(&spec, &data);
        assert!(report
            .issues
            .iter()
            .any(|i| i.message.contains("shared random effects")));
    }

    #[test]
    fn bad_status_and_nonbinary_values_flagged() {
        let mut spec = gaussian_spec();
        spec.markers[0].family = MarkerFamily::Bernoulli;
        let mut data = small_data();
        data.subjects[0].status = 3;
        let report = validate_spec(&spec, &data);
        assert!(report.issues.iter().any(|i| i.message.contains("status 3")));
        assert!(report.issues.iter().any(|i| i.message.contains("must be 0/1")));
    }

    #[test]
    fn cure_requires_gaussian_markers() {
        let mut spec = gaussian_spec();
        spec.markers[0].family = MarkerFamily::Bernoulli;
        spec.associations = vec![AssociationKind::SharedRandomEffects];
        spec.event.structure = EventStructure::MixtureCure;
        let mut data = small_data();
        for row in &mut data.subjects[0].rows {
            row.values[0] = Some(1.0);
        }
        let report = validate_spec(&spec, &data);
        assert!(report
            .issues
            .iter()
            .any(|i| i.message.contains("cure models only support Gaussian")));
    }

    #[test]
    fn empty_marker_flagged() {
        let spec = gaussian_spec();
        let mut data = small_data();
        for row in &mut data.subjects[0].rows {
            row.values[0] = None;
        }
        let report = validate_spec(&spec, &data);
        assert!(report
            .issues
            .iter()
            .any(|i| i.message.contains("no observations")));
    }
}
