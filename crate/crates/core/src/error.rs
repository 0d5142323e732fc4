use std::fmt;

use crate::ids::{ContentId, ProducerId, ViewerId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// One broken invariant found while validating a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationIssue {
    pub entity: String,
    pub message: String,
}

impl ValidationIssue {
    pub fn new(entity: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            entity: entity.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid scenario: {}", join_issues(.0))]
    Validation(Vec<ValidationIssue>),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("period {period} is outside the horizon 1..={horizon}")]
    PeriodOutOfRange { period: u32, horizon: u32 },

    #[error("the objective has an infinite horizon, which cannot be evaluated")]
    InfiniteHorizon,

    #[error("simulation already finished: period {period} exceeds horizon {horizon}")]
    PastHorizon { period: u32, horizon: u32 },

    #[error("viewer {viewer} ranked content {content} that is not in their eligible inventory")]
    IneligibleContent { viewer: ViewerId, content: ContentId },

    #[error("instance too large for exhaustive search: {bound:.3e} candidate sequences exceeds {limit:.0e}")]
    InstanceTooLarge { bound: f64, limit: f64 },

    #[error("oracle requires threshold production mode")]
    OracleNeedsThresholdMode,

    #[error("sequences diverge at period {diverged_at}, before the compared period {period}")]
    EarlyDivergence { diverged_at: u32, period: u32 },

    #[error("fixed sequence has no ranking for viewer {viewer} at period {period}")]
    MissingSequenceEntry { viewer: ViewerId, period: u32 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("dataset has no features")]
    NoFeatures,

    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: String },

    #[error("dimension mismatch: expected {expected} features, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("training split is degenerate: {0}")]
    DegenerateSplit(String),

    #[error("evaluation row for producer {0} reached a fit call")]
    Leakage(ProducerId),

    #[error("feature for producer {producer} observed at period {observed_at}, not before experiment start {start}")]
    PostPeriodFeature {
        producer: ProducerId,
        observed_at: u32,
        start: u32,
    },

    #[error("empty cell in group comparison: {0}")]
    EmptyCell(String),

    #[error("not enough producers: {0}")]
    InsufficientProducers(String),

    #[error("fractions sum to {0}, which exceeds 1")]
    FractionSum(f64),

    #[error("boost set is empty")]
    EmptyBoostSet,

    #[error("score set is empty")]
    EmptyScores,

    #[error("no score for non-holdout producer {0}")]
    MissingScore(ProducerId),

    #[error("holdout is empty")]
    EmptyHoldout,

    #[error("malformed model: {0}")]
    MalformedModel(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn join_issues(issues: &[ValidationIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage { stage, source: Box::new(e) })
    }
}
