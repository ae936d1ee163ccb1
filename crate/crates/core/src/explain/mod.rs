//! Feature-attribution engines.
//!
//! All explainers attribute the positive-class probability of a
//! [`PredictFn`](crate::model::PredictFn). Absent features are valued
//! interventionally: they take their values from rows of an explicit
//! [`Background`].

mod lime;
mod shapley;

pub use lime::{lime_explain, lime_explain_with, LimeConfig};
pub use shapley::{
    coalition_value, shapley_exact, shapley_exact_with_limit, shapley_mc, DEFAULT_EXACT_LIMIT,
    DEFAULT_MC_PERMUTATIONS,
};

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{Dataset, FeatureSchema, Instance, SchemaError};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("exact Shapley values are limited to {limit} features, got {m}; use the Monte-Carlo estimator")]
    TooManyFeatures { m: usize, limit: usize },
    #[error("surrogate fit failed: {0}")]
    Fit(String),
    #[error("i/o error")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ExactShap,
    McShap,
    Lime,
    Cafa,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::ExactShap => "exact-shap",
            Method::McShap => "mc-shap",
            Method::Lime => "lime",
            Method::Cafa => "cafa",
        }
    }
}

/// Per-feature importances `phi` plus the base value `phi0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub method: Method,
    pub phi0: f64,
    pub phi: Vec<f64>,
    pub feature_names: Vec<String>,
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct FeatureEntry<'a> {
    feature: &'a str,
    value: f64,
}

#[derive(Serialize)]
struct AttributionDoc<'a> {
    method: &'static str,
    phi0: f64,
    phi: Vec<FeatureEntry<'a>>,
    seed: Option<u64>,
}

impl Attribution {
    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    /// `phi0 + sum(phi)`; equals the explained output for Shapley methods.
    pub fn total(&self) -> f64 {
        self.phi0 + self.phi.iter().sum::<f64>()
    }

    /// Feature indices by descending `|phi|`, ties by index.
    pub fn ranking(&self) -> Vec<usize> {
        rank_desc(&self.phi.iter().map(|p| p.abs()).collect::<Vec<_>>())
    }

    /// `{method, phi0, phi: [{feature, value}], seed}`.
    pub fn to_json(&self) -> Result<String, ExplainError> {
        let doc = AttributionDoc {
            method: self.method.as_str(),
            phi0: self.phi0,
            phi: self
                .feature_names
                .iter()
                .zip(&self.phi)
                .map(|(f, &v)| FeatureEntry {
                    feature: f,
                    value: v,
                })
                .collect(),
            seed: self.seed,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// CSV `feature,phi,abs_phi` sorted by `abs_phi` descending.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), ExplainError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["feature", "phi", "abs_phi"])?;
        for j in self.ranking() {
            w.write_record([
                self.feature_names[j].clone(),
                format!("{}", self.phi[j]),
                format!("{}", self.phi[j].abs()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reference rows used to fill in absent features.
#[derive(Debug, Clone, PartialEq)]
pub struct Background {
    rows: Vec<Instance>,
}

impl Background {
    pub fn new(rows: Vec<Instance>) -> Result<Self, ExplainError> {
        if rows.is_empty() {
            return Err(ExplainError::InvalidInput("background is empty".into()));
        }
        Ok(Background { rows })
    }

    /// Seeded subsample of `n` dataset rows (all rows if `n >= len`).
    pub fn sample(data: &Dataset, n: usize, seed: u64) -> Result<Self, ExplainError> {
        let idx = data.sample_indices(n, seed);
        Background::new(idx.into_iter().map(|i| data.row(i).clone()).collect())
    }

    pub fn rows(&self) -> &[Instance] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub(crate) fn check(&self, schema: &FeatureSchema) -> Result<(), ExplainError> {
        for row in &self.rows {
            schema.check(row)?;
        }
        Ok(())
    }
}

/// Average of local explanations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalExplanation {
    pub mean_phi: Vec<f64>,
    pub mean_abs_phi: Vec<f64>,
    pub mean_phi0: f64,
    pub n: usize,
    pub feature_names: Vec<String>,
}

impl GlobalExplanation {
    /// Feature indices by descending mean `|phi|`, ties by index.
    pub fn ranking(&self) -> Vec<usize> {
        rank_desc(&self.mean_abs_phi)
    }

    /// CSV `feature,mean_phi,mean_abs_phi` sorted by `mean_abs_phi` descending.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), ExplainError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["feature", "mean_phi", "mean_abs_phi"])?;
        for j in self.ranking() {
            w.write_record([
                self.feature_names[j].clone(),
                format!("{}", self.mean_phi[j]),
                format!("{}", self.mean_abs_phi[j]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Component-wise means of `phi` and `|phi|`, summed in list order.
pub fn global_explanation(attributions: &[Attribution]) -> Result<GlobalExplanation, ExplainError> {
    let first = attributions
        .first()
        .ok_or_else(|| ExplainError::InvalidInput("no attributions to aggregate".into()))?;
    let m = first.len();
    let mut sum = vec![0.0; m];
    let mut sum_abs = vec![0.0; m];
    let mut sum0 = 0.0;
    for a in attributions {
        if a.len() != m {
            return Err(ExplainError::InvalidInput(format!(
                "attribution arity {} differs from {m}",
                a.len()
            )));
        }
        for j in 0..m {
            sum[j] += a.phi[j];
            sum_abs[j] += a.phi[j].abs();
        }
        sum0 += a.phi0;
    }
    let n = attributions.len() as f64;
    Ok(GlobalExplanation {
        mean_phi: sum.into_iter().map(|s| s / n).collect(),
        mean_abs_phi: sum_abs.into_iter().map(|s| s / n).collect(),
        mean_phi0: sum0 / n,
        n: attributions.len(),
        feature_names: first.feature_names.clone(),
    })
}

pub(crate) fn rank_desc(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}
