//! Model description, data containers, validation, and state initialization.
//!
//! A fitted model couples one or more longitudinal markers (mixed-model
//! linear predictors over explicit design columns) with a time-to-event
//! outcome whose log hazard adds marker-driven association terms on top of a
//! parametric baseline. Everything downstream (likelihood, sampler,
//! simulator) consumes the resolved form produced by `prepare`.

mod dataset;
mod init;
mod prepare;
mod spec;
mod state;
mod validate;

pub use dataset::{Dataset, MarkerSeries, SubjectData};
pub use init::initial_state;
pub use prepare::{
    prepare, MarkerDesign, PreparedCause, PreparedMarker, PreparedModel, PreparedSubject,
};
pub use spec::{
    AssociationKind, BaselineHazardSpec, EventSpec, EventStructure, GammaPrior, MarkerFamily,
    MarkerSpec, ModelSpec, NormalPrior, PriorSet, INTERCEPT_COLUMN, TIME_COLUMN,
};
pub use state::{BaselineParams, CauseParams, CureParams, HurdleParams, ParamState};
pub use validate::{validate_spec, ResolvedDims, ValidationIssue, ValidationReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("column `{column}` not found in {table}")]
    MissingColumn { table: String, column: String },
    #[error("subject `{subject}`: {message}")]
    InvalidSubject { subject: String, message: String },
    #[error("marker `{marker}`: {message}")]
    InvalidMarker { marker: String, message: String },
    #[error("design matrix for marker `{0}` is singular; falling back is not possible here")]
    SingularDesign(String),
    #[error("spec validation failed:\n{0}")]
    Invalid(ValidationReport),
    #[error("{0}")]
    Data(String),
}
