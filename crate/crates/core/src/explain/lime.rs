use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{Attribution, ExplainError, Method};
use crate::distance::DistanceParams;
use crate::model::PredictFn;
use crate::rng::stream_rng;
use crate::schema::{FeatureKind, FeatureSchema, FeatureValue, Instance};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimeConfig {
    /// Kernel width; `None` uses `0.75 * sqrt(mean distance)` over the samples.
    pub kernel_width: Option<f64>,
    /// Ridge penalty relative to the total sample weight.
    pub ridge: f64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig {
            kernel_width: None,
            ridge: 1e-4,
        }
    }
}

pub fn lime_explain(
    f: &dyn PredictFn,
    x: &Instance,
    schema: &FeatureSchema,
    n_samples: usize,
    seed: u64,
) -> Result<Attribution, ExplainError> {
    lime_explain_with(f, x, schema, n_samples, seed, &LimeConfig::default())
}

/// Weighted ridge surrogate over uniform perturbations of every feature.
///
/// Interpretable inputs: continuous features keep their `[0, 1]` value,
/// categorical features become "equals the query's category" indicators.
/// Samples are weighted by `exp(-d^2 / width^2)` with `d` the instance
/// distance to `x`; the intercept is unpenalized and reported as `phi0`.
pub fn lime_explain_with(
    f: &dyn PredictFn,
    x: &Instance,
    schema: &FeatureSchema,
    n_samples: usize,
    seed: u64,
    cfg: &LimeConfig,
) -> Result<Attribution, ExplainError> {
    schema.check(x)?;
    let m = schema.len();
    if n_samples < m + 2 {
        return Err(ExplainError::InvalidInput(format!(
            "need at least {} samples for {m} features, got {n_samples}",
            m + 2
        )));
    }
    if !(cfg.ridge >= 0.0) {
        return Err(ExplainError::InvalidInput(format!(
            "negative ridge {}",
            cfg.ridge
        )));
    }
    let dist = DistanceParams::from_schema(schema);
    let mut rng = stream_rng(seed, 0x11e);

    let mut design = DMatrix::<f64>::zeros(n_samples, m);
    let mut target = DVector::<f64>::zeros(n_samples);
    let mut distances = Vec::with_capacity(n_samples);
    let mut z: Vec<FeatureValue> = x.values().to_vec();
    for i in 0..n_samples {
        for (j, feature) in schema.features().iter().enumerate() {
            z[j] = match &feature.kind {
                FeatureKind::Categorical { vocabulary } => {
                    FeatureValue::Category(rng.random_range(0..vocabulary.len()) as u32)
                }
                FeatureKind::Continuous => FeatureValue::Real(rng.random::<f64>()),
            };
            design[(i, j)] = match z[j] {
                FeatureValue::Category(_) => f64::from(u8::from(z[j] == x[j])),
                FeatureValue::Real(r) => r,
            };
        }
        target[i] = f.positive_proba(&z);
        distances.push(dist.delta_unchecked(x, &z));
    }

    let width = match cfg.kernel_width {
        Some(w) => w,
        None => 0.75 * (distances.iter().sum::<f64>() / n_samples as f64).sqrt(),
    };
    if !(width > 0.0 && width.is_finite()) {
        return Err(ExplainError::Fit(format!(
            "kernel width {width} is not positive"
        )));
    }
    let weights: Vec<f64> = distances
        .iter()
        .map(|d| (-(d * d) / (width * width)).exp())
        .collect();
    let total_w: f64 = weights.iter().sum();
    if !(total_w > 0.0) {
        return Err(ExplainError::Fit("all sample weights vanish".into()));
    }

    let x_mean: Vec<f64> = (0..m)
        .map(|j| {
            (0..n_samples)
                .map(|i| weights[i] * design[(i, j)])
                .sum::<f64>()
                / total_w
        })
        .collect();
    let y_mean = (0..n_samples).map(|i| weights[i] * target[i]).sum::<f64>() / total_w;

    let mut gram = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    for i in 0..n_samples {
        let w = weights[i];
        let yc = target[i] - y_mean;
        for a in 0..m {
            let xa = design[(i, a)] - x_mean[a];
            rhs[a] += w * xa * yc;
            for b in a..m {
                gram[(a, b)] += w * xa * (design[(i, b)] - x_mean[b]);
            }
        }
    }
    for a in 0..m {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
        gram[(a, a)] += cfg.ridge * total_w;
    }
    let scale = gram
        .diagonal()
        .iter()
        .fold(0.0f64, |acc, d| acc.max(d.abs()));
    let chol = gram
        .clone()
        .cholesky()
        .filter(|c| {
            c.l()
                .diagonal()
                .iter()
                .all(|d| d * d > 1e-12 * scale.max(f64::MIN_POSITIVE))
        })
        .ok_or_else(|| ExplainError::Fit("design matrix is singular".into()))?;
    let beta = chol.solve(&rhs);
    let phi: Vec<f64> = beta.iter().copied().collect();
    let phi0 = y_mean - phi.iter().zip(&x_mean).map(|(b, xm)| b * xm).sum::<f64>();
    Ok(Attribution {
        method: Method::Lime,
        phi0,
        phi,
        feature_names: schema.names(),
        seed: Some(seed),
    })
}
