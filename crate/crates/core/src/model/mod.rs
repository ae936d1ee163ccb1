//! Prediction functions: the model-agnostic [`PredictFn`] interface and the
//! built-in random forest.

mod forest;
mod tree;

pub use forest::{train_forest, ForestParams, RandomForest};
pub use tree::{DecisionTree, Node, SplitTest};

use std::fmt;

use thiserror::Error;

use crate::schema::{FeatureSchema, FeatureValue, Instance, SchemaError};

/// Class whose probability the explainers attribute.
pub const POSITIVE_CLASS: usize = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training data contains a single class")]
    SingleClass,
    #[error("training needs at least {min} rows, got {actual}")]
    TooFewRows { min: usize, actual: usize },
    #[error("training data has no features")]
    NoFeatures,
    #[error("invalid hyperparameters: {0}")]
    InvalidParams(String),
    #[error("invalid input: {0}")]
    InvalidInput(#[from] SchemaError),
    #[error("malformed model: {0}")]
    Malformed(String),
    #[error("model serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

/// A trained classifier: `x -> (class, probability vector)`.
///
/// Implementations must return a non-negative probability vector summing to
/// one. `proba_into` and `positive_proba` skip schema validation; callers go
/// through [`predict`] when the input has not been checked.
pub trait PredictFn: Send + Sync {
    fn schema(&self) -> &FeatureSchema;

    fn n_classes(&self) -> usize;

    fn proba_into(&self, x: &[FeatureValue], out: &mut [f64]);

    /// Probability of [`POSITIVE_CLASS`].
    fn positive_proba(&self, x: &[FeatureValue]) -> f64 {
        let mut out = vec![0.0; self.n_classes()];
        self.proba_into(x, &mut out);
        out[POSITIVE_CLASS.min(out.len() - 1)]
    }

    /// Hard label: argmax of the probability vector, lowest class id on ties.
    fn predict_class(&self, x: &[FeatureValue]) -> usize {
        let mut out = vec![0.0; self.n_classes()];
        self.proba_into(x, &mut out);
        argmax(&out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub proba: Vec<f64>,
}

/// Validated prediction.
pub fn predict(model: &dyn PredictFn, x: &Instance) -> Result<Prediction, ModelError> {
    model.schema().check(x)?;
    let mut proba = vec![0.0; model.n_classes()];
    model.proba_into(x, &mut proba);
    Ok(Prediction {
        class: argmax(&proba),
        proba,
    })
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Binary model defined by a closure returning the positive-class probability.
///
/// The closure output is reported as-is by `positive_proba`, so additive test
/// functions such as `x1 + x2` may exceed 1; `proba_into` clamps before
/// building the two-class vector.
pub struct BinaryFn<F> {
    schema: FeatureSchema,
    f: F,
}

impl<F> BinaryFn<F>
where
    F: Fn(&[FeatureValue]) -> f64 + Send + Sync,
{
    pub fn new(schema: FeatureSchema, f: F) -> Self {
        BinaryFn { schema, f }
    }
}

impl<F> fmt::Debug for BinaryFn<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BinaryFn")
            .field("features", &self.schema.len())
            .finish()
    }
}

impl<F> PredictFn for BinaryFn<F>
where
    F: Fn(&[FeatureValue]) -> f64 + Send + Sync,
{
    fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    fn n_classes(&self) -> usize {
        2
    }

    fn proba_into(&self, x: &[FeatureValue], out: &mut [f64]) {
        let p = (self.f)(x).clamp(0.0, 1.0);
        out[0] = 1.0 - p;
        out[1] = p;
    }

    fn positive_proba(&self, x: &[FeatureValue]) -> f64 {
        (self.f)(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Feature;

    #[test]
    fn argmax_prefers_lowest_id_on_ties() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn predict_validates_input() {
        let schema = FeatureSchema::new(vec![Feature::continuous("a", true)]).unwrap();
        let m = BinaryFn::new(schema, |x: &[FeatureValue]| x[0].as_f64());
        let p = predict(&m, &Instance::new(vec![FeatureValue::Real(0.75)])).unwrap();
        assert_eq!(p.class, 1);
        assert_eq!(p.proba, vec![0.25, 0.75]);
        assert!(predict(&m, &Instance::new(vec![FeatureValue::Category(0)])).is_err());
        assert!(predict(&m, &Instance::new(vec![])).is_err());
    }
}
