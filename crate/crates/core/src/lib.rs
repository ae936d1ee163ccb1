//! Controllable-factor feature attribution for tabular classifiers.
//!
//! The crate computes feature importances restricted to the features an
//! intervention can change. Around a query instance it perturbs only the
//! controllable features, labels the perturbations with the full model,
//! balances the result per class, fits a surrogate forest on that
//! neighborhood and averages the surrogate's Shapley explanations over it.
//! Uncontrollable features are constant across the neighborhood and therefore
//! receive exactly zero attribution.
//!
//! Modules, bottom-up: [`schema`] (features, datasets, ingestion),
//! [`model`] (prediction interface and random forest), [`distance`],
//! [`sampler`] (selective perturbation), [`explain`] (Shapley and LIME-style
//! explainers), [`cafa`] (the orchestrator) and [`bench`] (synthetic data,
//! experiment driver, SVG charts).

pub mod bench;
pub mod cafa;
pub mod datasets;
pub mod distance;
pub mod explain;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod schema;

pub use cafa::{cafa_global, cafa_local, compare_with_shap, CafaConfig, CafaError, CafaResult};
pub use distance::{delta, estimate_proximity, feature_distance, DistanceParams};
pub use explain::{
    coalition_value, global_explanation, lime_explain, shapley_exact, shapley_mc, Attribution,
    Background, Method,
};
pub use model::{predict, train_forest, ForestParams, PredictFn, RandomForest};
pub use sampler::{generate_neighborhood, perturb_once, NeighborhoodSample, SamplerConfig};
pub use schema::{
    load_csv, Dataset, Feature, FeatureKind, FeatureSchema, FeatureValue, IngestSpec, Instance,
};
