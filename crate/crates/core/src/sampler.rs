//! Selective perturbation: the balanced, model-labeled neighborhood of a
//! query instance.
//!
//! Candidates keep every uncontrollable feature of the origin, resample the
//! controllable ones independently, and are kept only when they lie within
//! the proximity threshold. Survivors are labeled by the model until every
//! observed class has `k` members, then each class is downsampled to exactly
//! `k` rows.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distance::DistanceParams;
use crate::model::PredictFn;
use crate::rng::stream_rng;
use crate::schema::{
    DataError, Dataset, FeatureKind, FeatureSchema, FeatureValue, Instance, SchemaError,
};

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(
        "neighborhood imbalance after {attempts} attempts: per-class counts {counts:?}, need {k} per class \
         (the model may be constant around this instance)"
    )]
    Imbalance {
        counts: Vec<usize>,
        attempts: usize,
        k: usize,
    },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Standard deviation of the truncated Gaussian used for continuous features.
    pub sigma: f64,
    pub max_attempts: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            sigma: 0.25,
            max_attempts: 200_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerStats {
    pub attempts: usize,
    pub rejections_distance: usize,
    /// Accepted candidates dropped when downsampling each class to `k`.
    pub rejections_balance: usize,
}

/// Balanced labeled neighborhood with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodSample {
    pub data: Dataset,
    pub origin: Instance,
    pub pi: f64,
    pub k: usize,
    pub stats: SamplerStats,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub pi: f64,
    pub k: usize,
    pub stats: SamplerStats,
}

impl NeighborhoodSample {
    pub fn provenance(&self) -> Provenance {
        Provenance {
            seed: self.seed,
            pi: self.pi,
            k: self.k,
            stats: self.stats,
        }
    }

    /// Writes the rows as CSV and the provenance as a JSON sidecar.
    pub fn write_dump<W: Write, S: Write>(
        &self,
        csv_out: W,
        mut sidecar: S,
    ) -> Result<(), DataError> {
        self.data.write_csv(csv_out)?;
        serde_json::to_writer_pretty(&mut sidecar, &self.provenance())?;
        sidecar.write_all(b"\n")?;
        Ok(())
    }
}

/// Draws one candidate: uncontrollable features copied from `x`, each
/// controllable feature resampled independently (uniform category, or a
/// Gaussian around the current value truncated to `[0, 1]`).
pub fn perturb_once<R: Rng + ?Sized>(
    x: &Instance,
    schema: &FeatureSchema,
    sigma: f64,
    rng: &mut R,
) -> Instance {
    let mut values = x.values().to_vec();
    for (j, feature) in schema.features().iter().enumerate() {
        if !feature.controllable {
            continue;
        }
        values[j] = match &feature.kind {
            FeatureKind::Categorical { vocabulary } => {
                FeatureValue::Category(rng.random_range(0..vocabulary.len()) as u32)
            }
            FeatureKind::Continuous => {
                let center = x[j].as_f64();
                FeatureValue::Real(truncated_normal(center, sigma, rng))
            }
        };
    }
    Instance::new(values)
}

fn truncated_normal<R: Rng + ?Sized>(mean: f64, sigma: f64, rng: &mut R) -> f64 {
    if sigma <= 0.0 {
        return mean.clamp(0.0, 1.0);
    }
    let normal = Normal::new(mean, sigma).expect("finite sigma");
    for _ in 0..1000 {
        let v = normal.sample(rng);
        if (0.0..=1.0).contains(&v) {
            return v;
        }
    }
    // unreachable in practice: the mean lies in [0, 1]
    rng.random::<f64>()
}

/// Builds the balanced neighborhood `D_x` around `x`.
pub fn generate_neighborhood(
    x: &Instance,
    f: &dyn PredictFn,
    schema: &FeatureSchema,
    pi: f64,
    k: usize,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<NeighborhoodSample, SampleError> {
    if !(pi > 0.0 && pi <= 1.0) {
        return Err(SampleError::InvalidInput(format!(
            "proximity {pi} outside (0, 1]"
        )));
    }
    if k == 0 {
        return Err(SampleError::InvalidInput("k must be at least 1".into()));
    }
    if !(cfg.sigma.is_finite() && cfg.sigma >= 0.0) {
        return Err(SampleError::InvalidInput(format!(
            "invalid sigma {}",
            cfg.sigma
        )));
    }
    schema.check(x)?;
    if f.schema().len() != schema.len() {
        return Err(SampleError::InvalidInput(format!(
            "model expects {} features, schema has {}",
            f.schema().len(),
            schema.len()
        )));
    }

    let params = DistanceParams::from_schema(schema);
    let n_classes = f.n_classes();
    let required_classes = n_classes.min(2);
    let mut rng = stream_rng(seed, 0x5e1ec7);
    let mut buckets: Vec<Vec<Instance>> = vec![Vec::new(); n_classes];
    let mut stats = SamplerStats::default();

    let satisfied = |buckets: &[Vec<Instance>]| {
        let observed = buckets.iter().filter(|b| !b.is_empty()).count();
        observed >= required_classes && buckets.iter().all(|b| b.is_empty() || b.len() >= k)
    };
    while !satisfied(&buckets) {
        if stats.attempts >= cfg.max_attempts {
            return Err(SampleError::Imbalance {
                counts: buckets.iter().map(Vec::len).collect(),
                attempts: stats.attempts,
                k,
            });
        }
        stats.attempts += 1;
        let candidate = perturb_once(x, schema, cfg.sigma, &mut rng);
        if params.delta_unchecked(x, &candidate) > pi {
            stats.rejections_distance += 1;
            continue;
        }
        let label = f.predict_class(&candidate);
        buckets[label].push(candidate);
    }

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (class, bucket) in buckets.into_iter().enumerate() {
        if bucket.is_empty() {
            continue;
        }
        stats.rejections_balance += bucket.len() - k;
        let mut keep = rand::seq::index::sample(&mut rng, bucket.len(), k).into_vec();
        keep.sort_unstable();
        let mut bucket: Vec<Option<Instance>> = bucket.into_iter().map(Some).collect();
        for i in keep {
            rows.push(bucket[i].take().expect("indices are distinct"));
            labels.push(class);
        }
    }
    let classes = (0..n_classes).map(|c| c.to_string()).collect();
    let data = Dataset::new(schema.clone(), rows, labels, classes)?;
    Ok(NeighborhoodSample {
        data,
        origin: x.clone(),
        pi,
        k,
        stats,
        seed,
    })
}
