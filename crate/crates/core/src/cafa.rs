//! The CAFA pipeline: selective perturbation, surrogate training and the
//! averaged Shapley explanation of the surrogate over the neighborhood.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distance::{estimate_proximity, DistanceError, DistanceParams, DEFAULT_PROXIMITY_PAIRS};
use crate::explain::{
    global_explanation, shapley_exact, shapley_mc, Attribution, Background, ExplainError,
    GlobalExplanation, Method, DEFAULT_EXACT_LIMIT, DEFAULT_MC_PERMUTATIONS,
};
use crate::model::{train_forest, ForestParams, ModelError, PredictFn, RandomForest};
use crate::rng::mix;
use crate::sampler::{
    generate_neighborhood, NeighborhoodSample, SampleError, SamplerConfig, SamplerStats,
};
use crate::schema::{Dataset, FeatureSchema, Instance};

/// Rows explained per neighborhood with the exact explainer when unset.
pub const DEFAULT_EXACT_LOCALS: usize = 200;
/// Permutations per explained row when the Monte-Carlo explainer is picked automatically.
pub const DEFAULT_CAFA_PERMUTATIONS: usize = 100;

#[derive(Debug, Error)]
pub enum CafaError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Neighborhood(#[from] SampleError),
    #[error("surrogate training failed on a {rows}-row neighborhood ({stats:?}): {source}")]
    Surrogate {
        source: ModelError,
        rows: usize,
        stats: SamplerStats,
    },
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Distance(#[from] DistanceError),
    #[error("correlation undefined: {0}")]
    CorrelationUndefined(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("all {0} instances failed")]
    AllFailed(usize),
}

/// Shapley explainer used on the surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Explainer {
    Exact,
    Mc {
        n_perms: usize,
    },
    /// Exact up to the exact-enumeration limit, otherwise Monte-Carlo.
    Auto,
}

impl Explainer {
    pub fn resolve(self, m: usize, mc_perms: usize) -> Explainer {
        match self {
            Explainer::Auto if m <= DEFAULT_EXACT_LIMIT => Explainer::Exact,
            Explainer::Auto => Explainer::Mc { n_perms: mc_perms },
            other => other,
        }
    }

    fn explain(
        self,
        f: &dyn PredictFn,
        x: &Instance,
        bg: &Background,
        seed: u64,
    ) -> Result<Attribution, ExplainError> {
        match self {
            Explainer::Mc { n_perms } => shapley_mc(f, x, bg, n_perms, seed),
            _ => shapley_exact(f, x, bg),
        }
    }
}

impl fmt::Display for Explainer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Explainer::Exact => write!(f, "exact"),
            Explainer::Mc { n_perms } => write!(f, "mc({n_perms})"),
            Explainer::Auto => write!(f, "auto"),
        }
    }
}

/// Proximity threshold: fixed, or the dataset's mean pairwise distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Proximity {
    Fixed { pi: f64 },
    Estimate { n_pairs: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CafaConfig {
    /// Rows kept per predicted class in the neighborhood.
    pub k: usize,
    pub proximity: Proximity,
    pub surrogate: ForestParams,
    pub explainer: Explainer,
    /// Neighborhood rows explained before averaging; `None` picks all rows
    /// for Monte-Carlo and at most 200 for exact.
    pub n_locals: Option<usize>,
    pub background_size: usize,
    pub sampler: SamplerConfig,
    pub seed: u64,
}

impl Default for CafaConfig {
    fn default() -> Self {
        CafaConfig {
            k: 500,
            proximity: Proximity::Estimate {
                n_pairs: DEFAULT_PROXIMITY_PAIRS,
            },
            surrogate: ForestParams::default(),
            explainer: Explainer::Auto,
            n_locals: None,
            background_size: 100,
            sampler: SamplerConfig::default(),
            seed: 0,
        }
    }
}

impl CafaConfig {
    /// Replaces an estimated proximity with its value on `data`.
    pub fn resolve(&self, data: &Dataset) -> Result<CafaConfig, CafaError> {
        let mut cfg = self.clone();
        if let Proximity::Estimate { n_pairs } = self.proximity {
            let params = DistanceParams::from_schema(data.schema());
            let pi = estimate_proximity(data, &params, n_pairs, mix(self.seed, 0x91))?;
            cfg.proximity = Proximity::Fixed { pi };
        }
        Ok(cfg)
    }

    pub fn pi(&self) -> Option<f64> {
        match self.proximity {
            Proximity::Fixed { pi } => Some(pi),
            Proximity::Estimate { .. } => None,
        }
    }

    /// Config used for instance `index` of a global run.
    pub fn for_instance(&self, index: usize) -> CafaConfig {
        CafaConfig {
            seed: mix(self.seed, 0x1_0000 + index as u64),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodSummary {
    pub attempts: usize,
    pub rejections_distance: usize,
    pub rejections_balance: usize,
    pub pi: f64,
    pub k: usize,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CafaResult {
    /// Mean of the per-row attributions (`method = cafa`).
    pub attribution: Attribution,
    /// Mean of `|phi|` over the explained rows.
    pub importance: Vec<f64>,
    /// Per-row Shapley attributions of the surrogate, in `explained_rows` order.
    pub locals: Vec<Attribution>,
    pub explained_rows: Vec<usize>,
    pub neighborhood: NeighborhoodSummary,
    pub surrogate_accuracy: f64,
    pub explainer: Explainer,
    /// Uncontrollable features whose attribution was verified to be exactly zero.
    pub zeros_enforced: Vec<String>,
    pub seed: u64,
    /// The surrogate `g` fitted on the neighborhood.
    pub surrogate: RandomForest,
    /// The neighborhood `g` was fitted on and explained over.
    pub sample: NeighborhoodSample,
}

#[derive(Serialize)]
struct CafaDoc<'a> {
    method: &'static str,
    phi0: f64,
    phi: Vec<NamedValue<'a>>,
    importance: Vec<NamedValue<'a>>,
    zeros_enforced: &'a [String],
    neighborhood: &'a NeighborhoodSummary,
    surrogate_accuracy: f64,
    explainer: String,
    n_locals: usize,
    seed: u64,
}

#[derive(Serialize)]
struct NamedValue<'a> {
    feature: &'a str,
    value: f64,
}

fn named<'a>(names: &'a [String], values: &[f64]) -> Vec<NamedValue<'a>> {
    names
        .iter()
        .zip(values)
        .map(|(n, &v)| NamedValue {
            feature: n,
            value: v,
        })
        .collect()
}

impl CafaResult {
    /// `{method, phi0, phi, importance, zeros_enforced, neighborhood, surrogate_accuracy, ..., seed}`.
    pub fn to_json(&self) -> Result<String, CafaError> {
        serde_json::to_string_pretty(&self.doc()).map_err(|e| CafaError::Explain(e.into()))
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self.doc()).expect("document has string keys")
    }

    fn doc(&self) -> CafaDoc<'_> {
        let names = &self.attribution.feature_names;
        CafaDoc {
            method: Method::Cafa.as_str(),
            phi0: self.attribution.phi0,
            phi: named(names, &self.attribution.phi),
            importance: named(names, &self.importance),
            zeros_enforced: &self.zeros_enforced,
            neighborhood: &self.neighborhood,
            surrogate_accuracy: self.surrogate_accuracy,
            explainer: self.explainer.to_string(),
            n_locals: self.locals.len(),
            seed: self.seed,
        }
    }

    /// Attribution whose `phi` is the mean absolute per-row attribution.
    pub fn importance_attribution(&self) -> Attribution {
        Attribution {
            phi: self.importance.clone(),
            ..self.attribution.clone()
        }
    }
}

/// Explains `x` through a surrogate fitted on its selectively perturbed neighborhood.
pub fn cafa_local(
    x: &Instance,
    f: &dyn PredictFn,
    schema: &FeatureSchema,
    cfg: &CafaConfig,
) -> Result<CafaResult, CafaError> {
    let pi = cfg.pi().ok_or_else(|| {
        CafaError::InvalidConfig("proximity must be resolved before running".into())
    })?;
    if cfg.k == 0 {
        return Err(CafaError::InvalidConfig("k must be at least 1".into()));
    }
    if cfg.background_size == 0 {
        return Err(CafaError::InvalidConfig(
            "background_size must be at least 1".into(),
        ));
    }
    if cfg.n_locals == Some(0) {
        return Err(CafaError::InvalidConfig(
            "n_locals must be at least 1".into(),
        ));
    }

    let nb = generate_neighborhood(x, f, schema, pi, cfg.k, &cfg.sampler, mix(cfg.seed, 1))?;
    let data = &nb.data;
    let surrogate_params = ForestParams {
        seed: mix(cfg.seed, 2),
        ..cfg.surrogate.clone()
    };
    let g = train_forest(data, &surrogate_params).map_err(|source| CafaError::Surrogate {
        source,
        rows: data.len(),
        stats: nb.stats,
    })?;
    let bg = Background::sample(data, cfg.background_size, mix(cfg.seed, 3))?;

    let explainer = cfg
        .explainer
        .resolve(schema.len(), DEFAULT_CAFA_PERMUTATIONS);
    let n_locals = match (cfg.n_locals, explainer) {
        (Some(n), _) => n,
        (None, Explainer::Mc { .. }) => data.len(),
        (None, _) => DEFAULT_EXACT_LOCALS.min(data.len()),
    };
    if n_locals > data.len() {
        return Err(CafaError::InvalidConfig(format!(
            "n_locals {n_locals} exceeds neighborhood size {}",
            data.len()
        )));
    }
    let mut explained_rows = data.sample_indices(n_locals, mix(cfg.seed, 4));
    explained_rows.sort_unstable();

    let locals = explained_rows
        .par_iter()
        .map(|&i| explainer.explain(&g, data.row(i), &bg, mix(cfg.seed, 0x100 + i as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    let global = global_explanation(&locals)?;

    let mut zeros_enforced = Vec::new();
    for j in schema.uncontrollable() {
        if global.mean_phi[j] != 0.0 || global.mean_abs_phi[j] != 0.0 {
            return Err(CafaError::Invariant(format!(
                "uncontrollable feature `{}` received attribution {}",
                schema.feature(j).name,
                global.mean_phi[j]
            )));
        }
        zeros_enforced.push(schema.feature(j).name.clone());
    }

    Ok(CafaResult {
        attribution: Attribution {
            method: Method::Cafa,
            phi0: global.mean_phi0,
            phi: global.mean_phi,
            feature_names: schema.names(),
            seed: Some(cfg.seed),
        },
        importance: global.mean_abs_phi,
        locals,
        explained_rows,
        neighborhood: NeighborhoodSummary {
            attempts: nb.stats.attempts,
            rejections_distance: nb.stats.rejections_distance,
            rejections_balance: nb.stats.rejections_balance,
            pi,
            k: cfg.k,
            rows: data.len(),
        },
        surrogate_accuracy: g.accuracy(data),
        explainer,
        zeros_enforced,
        seed: cfg.seed,
        surrogate: g,
        sample: nb,
    })
}

/// Aggregate of per-instance CAFA runs.
#[derive(Debug, Clone)]
pub struct CafaGlobal {
    /// Mean over instances of each instance's CAFA attribution.
    pub global: GlobalExplanation,
    /// Mean over instances of each instance's importance vector.
    pub importance: Vec<f64>,
    pub per_instance: Vec<(usize, CafaResult)>,
    /// Instances whose local run failed, with the error message.
    pub failures: Vec<(usize, String)>,
}

impl CafaGlobal {
    pub fn mean_phi(&self) -> &[f64] {
        &self.global.mean_phi
    }

    pub fn mean_abs_phi(&self) -> &[f64] {
        &self.global.mean_abs_phi
    }
}

/// Runs [`cafa_local`] for each instance (seeded by its index) and averages.
/// Failed instances are skipped and reported.
pub fn cafa_global(
    xs: &[Instance],
    f: &dyn PredictFn,
    schema: &FeatureSchema,
    cfg: &CafaConfig,
) -> Result<CafaGlobal, CafaError> {
    if xs.is_empty() {
        return Err(CafaError::InvalidConfig("no instances to explain".into()));
    }
    let outcomes: Vec<Result<CafaResult, CafaError>> = xs
        .par_iter()
        .enumerate()
        .map(|(i, x)| cafa_local(x, f, schema, &cfg.for_instance(i)))
        .collect();
    let mut per_instance = Vec::new();
    let mut failures = Vec::new();
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => per_instance.push((i, r)),
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    if per_instance.is_empty() {
        return Err(CafaError::AllFailed(xs.len()));
    }
    let attributions: Vec<Attribution> = per_instance
        .iter()
        .map(|(_, r)| r.attribution.clone())
        .collect();
    let global = global_explanation(&attributions)?;
    let m = schema.len();
    let mut importance = vec![0.0; m];
    for (_, r) in &per_instance {
        for (acc, v) in importance.iter_mut().zip(&r.importance) {
            *acc += v;
        }
    }
    let n = per_instance.len() as f64;
    importance.iter_mut().for_each(|v| *v /= n);
    Ok(CafaGlobal {
        global,
        importance,
        per_instance,
        failures,
    })
}

/// Which vectors a CAFA/SHAP correlation is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationBasis {
    /// Signed SHAP values against the signed CAFA mean.
    Signed,
    /// `|SHAP|` against the CAFA mean absolute attribution.
    Magnitude,
}

#[derive(Debug, Clone)]
pub struct ShapComparison {
    pub cafa: CafaResult,
    pub shap: Attribution,
    pub pearson_signed: f64,
    pub pearson_magnitude: f64,
}

impl ShapComparison {
    pub fn pearson(&self, basis: CorrelationBasis) -> f64 {
        match basis {
            CorrelationBasis::Signed => self.pearson_signed,
            CorrelationBasis::Magnitude => self.pearson_magnitude,
        }
    }
}

/// Standard Shapley explanation of `f` at `x` (exact when small enough,
/// otherwise Monte-Carlo with the default permutation count).
pub fn standard_shap(
    f: &dyn PredictFn,
    x: &Instance,
    bg: &Background,
    seed: u64,
) -> Result<Attribution, ExplainError> {
    if x.len() <= DEFAULT_EXACT_LIMIT {
        shapley_exact(f, x, bg)
    } else {
        shapley_mc(f, x, bg, DEFAULT_MC_PERMUTATIONS, seed)
    }
}

/// Runs standard SHAP (with `shap_background`) and CAFA at `x` and correlates
/// them over the controllable features.
pub fn compare_with_shap(
    x: &Instance,
    f: &dyn PredictFn,
    schema: &FeatureSchema,
    cfg: &CafaConfig,
    shap_background: &Background,
) -> Result<ShapComparison, CafaError> {
    let controllable = schema.controllable();
    if controllable.len() < 2 {
        return Err(CafaError::InvalidConfig(format!(
            "correlation needs at least 2 controllable features, schema has {}",
            controllable.len()
        )));
    }
    let shap = standard_shap(f, x, shap_background, mix(cfg.seed, 0x5a))?;
    let cafa = cafa_local(x, f, schema, cfg)?;
    let pick = |v: &[f64], abs: bool| -> Vec<f64> {
        controllable
            .iter()
            .map(|&j| if abs { v[j].abs() } else { v[j] })
            .collect()
    };
    let pearson_signed = pearson(&pick(&shap.phi, false), &pick(&cafa.attribution.phi, false))?;
    let pearson_magnitude = pearson(&pick(&shap.phi, true), &pick(&cafa.importance, false))?;
    Ok(ShapComparison {
        cafa,
        shap,
        pearson_signed,
        pearson_magnitude,
    })
}

/// Pearson correlation; errors when either vector has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64, CafaError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(CafaError::CorrelationUndefined(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(CafaError::CorrelationUndefined("zero variance".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}
