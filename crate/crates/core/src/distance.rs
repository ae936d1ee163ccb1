//! Weighted mixed-type distance between instances.
//!
//! Per feature, categorical values contribute 0/1 (match/mismatch) and
//! continuous values contribute `|a - b|` on the `[0, 1]` scale; the instance
//! distance is the weight-normalized sum, so it is itself bounded in `[0, 1]`.

use rand::Rng;
use thiserror::Error;

use crate::rng::stream_rng;
use crate::schema::{Dataset, FeatureKind, FeatureSchema, FeatureValue, SchemaError};

/// Default number of sampled pairs when estimating the proximity threshold.
pub const DEFAULT_PROXIMITY_PAIRS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistanceError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

/// Feature kinds and weights, with the weight sum precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceParams {
    categorical: Vec<bool>,
    weights: Vec<f64>,
    normalizer: f64,
}

impl DistanceParams {
    pub fn from_schema(schema: &FeatureSchema) -> Self {
        let weights = schema.weights();
        // schema validation guarantees a positive weight sum
        let normalizer = weights.iter().sum();
        DistanceParams {
            categorical: schema
                .features()
                .iter()
                .map(|f| f.kind.is_categorical())
                .collect(),
            weights,
            normalizer,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Distance without kind checks; both slices must match the schema.
    #[inline]
    pub fn delta_unchecked(&self, a: &[FeatureValue], b: &[FeatureValue]) -> f64 {
        let mut sum = 0.0;
        for i in 0..self.weights.len() {
            let d = match (a[i], b[i]) {
                (FeatureValue::Category(x), FeatureValue::Category(y)) => {
                    f64::from(u8::from(x != y))
                }
                (FeatureValue::Real(x), FeatureValue::Real(y)) => (x - y).abs(),
                // mixed kinds never pass schema checks
                _ => 1.0,
            };
            sum += self.weights[i] * d;
        }
        sum / self.normalizer
    }
}

/// Per-feature distance: 0/1 for categories, absolute difference for reals.
pub fn feature_distance(
    kind: &FeatureKind,
    a: FeatureValue,
    b: FeatureValue,
) -> Result<f64, DistanceError> {
    match (kind, a, b) {
        (FeatureKind::Categorical { .. }, FeatureValue::Category(x), FeatureValue::Category(y)) => {
            Ok(if x == y { 0.0 } else { 1.0 })
        }
        (FeatureKind::Continuous, FeatureValue::Real(x), FeatureValue::Real(y)) => {
            Ok((x - y).abs())
        }
        _ => Err(DistanceError::InvalidInput(format!(
            "values {a:?} and {b:?} do not match feature kind {kind:?}"
        ))),
    }
}

/// Weighted distance between two instances of `schema`.
pub fn delta(
    schema: &FeatureSchema,
    params: &DistanceParams,
    a: &[FeatureValue],
    b: &[FeatureValue],
) -> Result<f64, DistanceError> {
    schema.check(a)?;
    schema.check(b)?;
    if params.len() != schema.len() {
        return Err(DistanceError::InvalidInput(format!(
            "distance parameters cover {} features, schema has {}",
            params.len(),
            schema.len()
        )));
    }
    Ok(params.delta_unchecked(a, b))
}

/// Mean pairwise distance over the dataset.
///
/// Uses every unordered pair when there are at most `n_pairs` of them and
/// otherwise `n_pairs` uniformly sampled pairs of distinct rows.
pub fn estimate_proximity(
    data: &Dataset,
    params: &DistanceParams,
    n_pairs: usize,
    seed: u64,
) -> Result<f64, DistanceError> {
    let n = data.len();
    if n < 2 {
        return Err(DistanceError::InvalidInput(format!(
            "proximity needs at least 2 rows, got {n}"
        )));
    }
    if n_pairs == 0 {
        return Err(DistanceError::InvalidInput(
            "n_pairs must be at least 1".into(),
        ));
    }
    let rows = data.rows();
    let total_pairs = (n as u128) * (n as u128 - 1) / 2;
    if total_pairs <= n_pairs as u128 {
        let mut sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                sum += params.delta_unchecked(&rows[i], &rows[j]);
            }
        }
        return Ok(sum / total_pairs as f64);
    }
    let mut rng = stream_rng(seed, 0x9a1e);
    let mut sum = 0.0;
    for _ in 0..n_pairs {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        sum += params.delta_unchecked(&rows[i], &rows[j]);
    }
    Ok(sum / n_pairs as f64)
}
