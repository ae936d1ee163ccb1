use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, DecisionTree, TrainView, TreeConfig};
use super::{ModelError, PredictFn};
use crate::rng::{mix, splitmix64, unit_f64};
use crate::schema::{Dataset, FeatureKind, FeatureSchema, FeatureValue};

pub const MIN_TRAINING_ROWS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features examined per split; `None` means `ceil(sqrt(m))`.
    #[serde(default)]
    pub features_per_split: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: 8,
            min_leaf: 2,
            features_per_split: None,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn resolved_features_per_split(&self, m: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (m as f64).sqrt().ceil() as usize)
            .clamp(1, m)
    }
}

/// Bagged ensemble of Gini trees; class probabilities are the mean of the
/// trees' leaf distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    params: ForestParams,
    schema: FeatureSchema,
    n_classes: usize,
    trees: Vec<DecisionTree>,
}

impl RandomForest {
    /// Assembles a forest from hand-built trees.
    pub fn from_trees(
        schema: FeatureSchema,
        n_classes: usize,
        trees: Vec<DecisionTree>,
        params: ForestParams,
    ) -> Result<Self, ModelError> {
        let forest = RandomForest {
            params,
            schema,
            n_classes,
            trees,
        };
        forest.validate()?;
        Ok(forest)
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    /// Fraction of rows whose hard prediction matches the label.
    pub fn accuracy(&self, data: &Dataset) -> f64 {
        let hits = data
            .rows()
            .iter()
            .zip(data.labels())
            .filter(|(x, &y)| self.predict_class(x) == y)
            .count();
        hits as f64 / data.len() as f64
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let forest: RandomForest = serde_json::from_str(text)?;
        forest.validate()?;
        Ok(forest)
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.trees.is_empty() {
            return Err(ModelError::Malformed("forest has no trees".into()));
        }
        if self.n_classes < 2 {
            return Err(ModelError::Malformed(
                "forest needs at least two classes".into(),
            ));
        }
        for tree in &self.trees {
            tree.validate(&self.schema, self.n_classes)?;
        }
        Ok(())
    }
}

impl PredictFn for RandomForest {
    fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn proba_into(&self, x: &[FeatureValue], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for tree in &self.trees {
            for (o, p) in out.iter_mut().zip(tree.leaf_proba(x)) {
                *o += p;
            }
        }
        let n = self.trees.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
    }

    fn positive_proba(&self, x: &[FeatureValue]) -> f64 {
        let pos = super::POSITIVE_CLASS.min(self.n_classes - 1);
        let sum: f64 = self.trees.iter().map(|t| t.leaf_proba(x)[pos]).sum();
        sum / self.trees.len() as f64
    }
}

/// Trains a forest by Poisson bootstrap aggregation with Gini splits.
///
/// Each row's bootstrap multiplicity in tree `t` is drawn from a hash of
/// `(seed, t, row content, label, occurrence)`, so the forest does not depend
/// on the order of the training rows.
pub fn train_forest(data: &Dataset, params: &ForestParams) -> Result<RandomForest, ModelError> {
    let m = data.n_features();
    if m == 0 {
        return Err(ModelError::NoFeatures);
    }
    if params.n_trees == 0 || params.max_depth == 0 || params.min_leaf == 0 {
        return Err(ModelError::InvalidParams(format!(
            "n_trees, max_depth and min_leaf must be positive (got {}, {}, {})",
            params.n_trees, params.max_depth, params.min_leaf
        )));
    }
    if data.len() < MIN_TRAINING_ROWS {
        return Err(ModelError::TooFewRows {
            min: MIN_TRAINING_ROWS,
            actual: data.len(),
        });
    }
    if data.distinct_labels() < 2 {
        return Err(ModelError::SingleClass);
    }

    let rows: Vec<&[FeatureValue]> = data.rows().iter().map(|r| r.values()).collect();
    let row_keys = content_keys(data);
    let kinds: Vec<FeatureKind> = data
        .schema()
        .features()
        .iter()
        .map(|f| f.kind.clone())
        .collect();
    let cfg = TreeConfig {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf as f64,
        features_per_split: params.resolved_features_per_split(m),
    };

    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let tree_seed = mix(params.seed, t as u64);
            let mut weights: Vec<f64> = row_keys
                .iter()
                .map(|&k| poisson1(mix(tree_seed, k)) as f64)
                .collect();
            if weights.iter().all(|&w| w == 0.0) {
                weights.iter_mut().for_each(|w| *w = 1.0);
            }
            let view = TrainView {
                rows: &rows,
                labels: data.labels(),
                weights: &weights,
                kinds: &kinds,
                n_classes: data.n_classes(),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(tree_seed));
            grow(&view, &cfg, &mut rng)
        })
        .collect();

    Ok(RandomForest {
        params: params.clone(),
        schema: data.schema().clone(),
        n_classes: data.n_classes(),
        trees,
    })
}

/// Order-independent per-row keys: content hash plus the occurrence count of
/// identical rows seen so far.
fn content_keys(data: &Dataset) -> Vec<u64> {
    let mut seen: HashMap<u64, u64> = HashMap::new();
    data.rows()
        .iter()
        .zip(data.labels())
        .map(|(row, &label)| {
            let h = row
                .iter()
                .fold(mix(0x0cafe, label as u64), |h, v| mix(h, v.bits()));
            let k = seen.entry(h).or_insert(0);
            let key = mix(h, *k);
            *k += 1;
            key
        })
        .collect()
}

/// Inverse-CDF draw from Poisson(1) using the hash as the uniform variate.
fn poisson1(h: u64) -> u32 {
    let u = unit_f64(h);
    let mut p = (-1.0f64).exp();
    let mut cdf = p;
    let mut k = 0;
    while u > cdf && k < 20 {
        k += 1;
        p /= k as f64;
        cdf += p;
    }
    k
}
