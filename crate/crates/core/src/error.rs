use thiserror::Error;

use crate::table::Source;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("subgroup table has zero total count")]
    EmptyTable,

    #[error("conditioning event has zero support: {0}")]
    ZeroSupport(String),

    #[error("index out of range: {what} = {index} but cardinality is {cardinality}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        cardinality: usize,
    },

    #[error("cardinality mismatch: expected {expected}, found {found}")]
    CardinalityMismatch { expected: String, found: String },

    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("table is not real-only: {0}")]
    NotRealOnly(String),

    #[error("seed table is not biased with respect to B; the theorem hypothesis does not hold")]
    UnbiasedSeed,

    #[error("enumeration of {size} augmentations exceeds the safety limit of {limit}")]
    EnumerationTooLarge { size: u128, limit: u128 },

    #[error("minority subgroup would be empty at bias ratio {ratio} with n_per_class = {n_per_class}; smallest feasible n_per_class is {smallest_feasible}")]
    MinorityEmpty {
        ratio: f64,
        n_per_class: usize,
        smallest_feasible: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("regime {0} forbids mixing synthetic data into the real corpus")]
    MixingForbidden(String),

    #[error("subgroup {0} is empty and cannot be resampled")]
    EmptySubgroup(String),

    #[error("batch mixes sources {0:?} under a source-separated pipeline")]
    MixedSourceBatch(Vec<Source>),

    #[error("non-finite {what} at epoch {epoch}, step {step}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        step: usize,
    },

    #[error("{method} requires {requirement}")]
    MissingRequirement {
        method: &'static str,
        requirement: &'static str,
    },

    #[error("source probe needs at least {needed} examples per source, got {real} real and {synthetic} synthetic")]
    ProbeTooSmall {
        needed: usize,
        real: usize,
        synthetic: usize,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}
