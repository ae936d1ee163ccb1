#![allow(dead_code)]

use cafa::model::{train_forest, ForestParams, PredictFn, RandomForest};
use cafa::rng::stream_rng;
use cafa::schema::{Dataset, Feature, FeatureKind, FeatureSchema, FeatureValue, Instance};
use rand::Rng;

/// Random mixed schema with `m` features; feature 0 is always controllable.
pub fn random_schema(m: usize, seed: u64) -> FeatureSchema {
    let mut rng = stream_rng(seed, 1);
    let features = (0..m)
        .map(|j| {
            let controllable = j == 0 || rng.random_bool(0.6);
            let f = if rng.random_bool(0.5) {
                Feature::coded(format!("f{j}"), rng.random_range(2..6), controllable)
            } else {
                Feature::continuous(format!("f{j}"), controllable)
            };
            f.with_weight(rng.random_range(0.2..3.0))
        })
        .collect();
    FeatureSchema::new(features).unwrap()
}

pub fn random_instance<R: Rng>(schema: &FeatureSchema, rng: &mut R) -> Instance {
    Instance::new(
        schema
            .features()
            .iter()
            .map(|f| match &f.kind {
                FeatureKind::Categorical { vocabulary } => {
                    FeatureValue::Category(rng.random_range(0..vocabulary.len()) as u32)
                }
                FeatureKind::Continuous => FeatureValue::Real(rng.random()),
            })
            .collect(),
    )
}

/// Ordinal of a value in `[0, 1]`, computed independently of the library.
pub fn ordinal(kind: &FeatureKind, v: FeatureValue) -> f64 {
    match (kind, v) {
        (FeatureKind::Categorical { vocabulary }, FeatureValue::Category(c)) => {
            if vocabulary.len() > 1 {
                c as f64 / (vocabulary.len() - 1) as f64
            } else {
                0.0
            }
        }
        (_, FeatureValue::Real(r)) => r,
        _ => panic!("kind mismatch"),
    }
}

/// Dataset labelled by a noisy linear rule over all features.
pub fn random_dataset(schema: &FeatureSchema, n: usize, seed: u64) -> Dataset {
    let mut rng = stream_rng(seed, 2);
    let w: Vec<f64> = (0..schema.len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let rows: Vec<Instance> = (0..n).map(|_| random_instance(schema, &mut rng)).collect();
    let scores: Vec<f64> = rows
        .iter()
        .map(|r| {
            (0..schema.len())
                .map(|j| w[j] * ordinal(&schema.feature(j).kind, r[j]))
                .sum::<f64>()
        })
        .collect();
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[n / 2];
    let mut labels: Vec<usize> = scores.iter().map(|&s| usize::from(s > median)).collect();
    // guarantee both classes
    labels[0] = 0;
    labels[1] = 1;
    Dataset::new(
        schema.clone(),
        rows,
        labels,
        vec!["neg".into(), "pos".into()],
    )
    .unwrap()
}

pub fn small_forest(data: &Dataset, seed: u64) -> RandomForest {
    let params = ForestParams {
        n_trees: 8,
        max_depth: 4,
        seed,
        ..ForestParams::default()
    };
    train_forest(data, &params).unwrap()
}

/// Weighted mixed distance written out from its definition.
pub fn oracle_delta(schema: &FeatureSchema, a: &[FeatureValue], b: &[FeatureValue]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (j, f) in schema.features().iter().enumerate() {
        let d = match (a[j], b[j]) {
            (FeatureValue::Category(x), FeatureValue::Category(y)) => {
                if x == y {
                    0.0
                } else {
                    1.0
                }
            }
            (FeatureValue::Real(x), FeatureValue::Real(y)) => (x - y).abs(),
            _ => panic!("kind mismatch"),
        };
        num += f.weight * d;
        den += f.weight;
    }
    num / den
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Shapley values by direct enumeration of every coalition; `phi0` is `v(empty)`.
pub fn brute_force_shapley(f: &dyn PredictFn, x: &Instance, bg: &[Instance]) -> (f64, Vec<f64>) {
    let m = x.len();
    let value = |mask: usize| -> f64 {
        let mut total = 0.0;
        for b in bg {
            let z: Vec<FeatureValue> = (0..m)
                .map(|j| if mask >> j & 1 == 1 { x[j] } else { b[j] })
                .collect();
            total += f.positive_proba(&z);
        }
        total / bg.len() as f64
    };
    let v: Vec<f64> = (0..1usize << m).map(value).collect();
    let mut phi = vec![0.0; m];
    for (j, p) in phi.iter_mut().enumerate() {
        for mask in 0..1usize << m {
            if mask >> j & 1 == 1 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let w = factorial(s) * factorial(m - s - 1) / factorial(m);
            *p += w * (v[mask | 1 << j] - v[mask]);
        }
    }
    (v[0], phi)
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
