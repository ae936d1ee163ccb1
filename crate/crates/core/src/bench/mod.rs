//! Synthetic benchmarks, the experiment driver and static SVG charts.

mod experiment;
pub mod svg;
mod synth;

pub use experiment::{execute, run_experiment, DatasetSource, ExperimentConfig, ExperimentReport};
pub use synth::{
    covid_preset, covid_preset_spec, generate_synth, lung_preset, lung_preset_spec,
    mutual_information, Correlation, LinearRule, SynthFeature, SynthKind, SynthSpec, COVID_BUCKETS,
    COVID_MEASURES, COVID_ROWS, LUNG_ROWS,
};

use thiserror::Error;

use crate::cafa::CafaError;
use crate::explain::ExplainError;
use crate::model::ModelError;
use crate::schema::{DataError, SchemaError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("{stage}: {source}")]
    Model {
        stage: &'static str,
        source: ModelError,
    },
    #[error("{stage}: {source}")]
    Explain {
        stage: &'static str,
        source: ExplainError,
    },
    #[error("{stage}: {source}")]
    Cafa {
        stage: &'static str,
        source: CafaError,
    },
    #[error("i/o error")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<ExplainError> for BenchError {
    fn from(source: ExplainError) -> Self {
        BenchError::Explain {
            stage: "report",
            source,
        }
    }
}
