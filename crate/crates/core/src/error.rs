use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrlError {
    #[error("structural error: {0}")]
    Structure(String),

    #[error("size error: {what} has {product} entries, above the cap of {cap}")]
    Size {
        what: String,
        product: u128,
        cap: usize,
    },

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no data for {kind} factor {factor}, row {row}")]
    NoData {
        kind: FactorKind,
        factor: usize,
        row: usize,
    },

    #[error("invalid model: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidModel(Vec<crate::fmdp::Violation>),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("run failed for seed {seed} at episode {episode}: {source}")]
    Run {
        seed: u64,
        episode: usize,
        #[source]
        source: Box<FrlError>,
    },

    #[error("audit error: {0}")]
    Audit(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, FrlError>;

impl FrlError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FrlError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Reward or transition side of a factored model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorKind {
    Reward,
    Transition,
}

impl std::fmt::Display for FactorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FactorKind::Reward => f.write_str("reward"),
            FactorKind::Transition => f.write_str("transition"),
        }
    }
}
