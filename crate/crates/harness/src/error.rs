use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] synthbias_core::Error),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("results schema mismatch, missing columns: {}", missing.join(", "))]
    SchemaMismatch { missing: Vec<String> },
    #[error("no result rows")]
    EmptyResults,
    #[error("manifest conflict at {path}: {reason}")]
    ManifestConflict { path: String, reason: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Core(_) => "core",
            HarnessError::InvalidGrid(_) => "invalid_grid",
            HarnessError::SchemaMismatch { .. } => "schema_mismatch",
            HarnessError::EmptyResults => "empty_results",
            HarnessError::ManifestConflict { .. } => "manifest_conflict",
            HarnessError::Csv(_) => "csv",
            HarnessError::Json(_) => "json",
            HarnessError::Io(_) => "io",
        }
    }
}
