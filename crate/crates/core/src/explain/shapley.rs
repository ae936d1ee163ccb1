use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{Attribution, Background, ExplainError, Method};
use crate::model::PredictFn;
use crate::rng::stream_rng;
use crate::schema::{FeatureValue, Instance};

pub const DEFAULT_EXACT_LIMIT: usize = 15;
pub const DEFAULT_MC_PERMUTATIONS: usize = 2_000;

fn check_inputs(f: &dyn PredictFn, x: &Instance, bg: &Background) -> Result<(), ExplainError> {
    f.schema().check(x)?;
    bg.check(f.schema())?;
    Ok(())
}

/// Mean positive-class probability over `bg` when the features in `subset`
/// take `x`'s values and every other feature takes the background row's value.
pub fn coalition_value(
    f: &dyn PredictFn,
    x: &Instance,
    subset: &[usize],
    bg: &Background,
) -> Result<f64, ExplainError> {
    check_inputs(f, x, bg)?;
    if let Some(&j) = subset.iter().find(|&&j| j >= x.len()) {
        return Err(ExplainError::InvalidInput(format!(
            "feature index {j} out of range"
        )));
    }
    let mut sum = 0.0;
    let mut z: Vec<FeatureValue> = Vec::with_capacity(x.len());
    for b in bg.rows() {
        z.clear();
        z.extend_from_slice(b);
        for &j in subset {
            z[j] = x[j];
        }
        sum += f.positive_proba(&z);
    }
    Ok(sum / bg.len() as f64)
}

/// Exact interventional Shapley values with the default feature limit.
pub fn shapley_exact(
    f: &dyn PredictFn,
    x: &Instance,
    bg: &Background,
) -> Result<Attribution, ExplainError> {
    shapley_exact_with_limit(f, x, bg, DEFAULT_EXACT_LIMIT)
}

/// Exact Shapley values by full coalition enumeration.
///
/// For each background row only the features where it differs from `x` can
/// change the model input, so the row needs `2^d` predictions (`d` = number
/// of differing features) rather than `2^m`; the values are then scattered
/// into all `2^m` coalition sums. Features equal to `x` in every background
/// row get bit-exact zero attributions.
pub fn shapley_exact_with_limit(
    f: &dyn PredictFn,
    x: &Instance,
    bg: &Background,
    limit: usize,
) -> Result<Attribution, ExplainError> {
    check_inputs(f, x, bg)?;
    let m = x.len();
    if m > limit || m > 30 {
        return Err(ExplainError::TooManyFeatures { m, limit });
    }
    let n_masks = 1usize << m;

    let per_row: Vec<(Vec<usize>, Vec<f64>)> = bg
        .rows()
        .par_iter()
        .map(|b| {
            let diff: Vec<usize> = (0..m).filter(|&j| x[j] != b[j]).collect();
            let mut z = b.values().to_vec();
            let preds = (0..1usize << diff.len())
                .map(|sub| {
                    for (k, &j) in diff.iter().enumerate() {
                        z[j] = if sub >> k & 1 == 1 { x[j] } else { b[j] };
                    }
                    f.positive_proba(&z)
                })
                .collect();
            (diff, preds)
        })
        .collect();

    let mut values = vec![0.0; n_masks];
    for (diff, preds) in &per_row {
        for (mask, v) in values.iter_mut().enumerate() {
            let mut sub = 0usize;
            for (k, &j) in diff.iter().enumerate() {
                sub |= (mask >> j & 1) << k;
            }
            *v += preds[sub];
        }
    }
    let n_bg = bg.len() as f64;
    values.iter_mut().for_each(|v| *v /= n_bg);

    let weights = shapley_weights(m);
    let mut phi = vec![0.0; m];
    for (mask, &v) in values.iter().enumerate() {
        let size = mask.count_ones() as usize;
        for (j, p) in phi.iter_mut().enumerate() {
            if mask >> j & 1 == 0 {
                *p += weights[size] * (values[mask | 1 << j] - v);
            }
        }
    }
    Ok(Attribution {
        method: Method::ExactShap,
        phi0: values[0],
        phi,
        feature_names: f.schema().names(),
        seed: None,
    })
}

/// `|S|! (m - |S| - 1)! / m!` indexed by `|S|`.
fn shapley_weights(m: usize) -> Vec<f64> {
    let fact: Vec<f64> = (0..=m)
        .scan(1.0, |acc, k| {
            if k > 0 {
                *acc *= k as f64;
            }
            Some(*acc)
        })
        .collect();
    (0..m)
        .map(|s| fact[s] * fact[m - s - 1] / fact[m])
        .collect()
}

/// Permutation-sampling Shapley estimator.
///
/// Permutation `p` uses background row `order[p mod B]` for a seeded shuffle
/// `order` and walks from that row to `x` one feature at a time in permuted
/// order, crediting each step's change in output to the feature switched.
/// Each walk telescopes to `f(x) - f(b)`, and `phi0` is the mean `f(b)` over
/// the rows actually visited, so `phi0 + sum(phi) = f(x)` up to rounding.
pub fn shapley_mc(
    f: &dyn PredictFn,
    x: &Instance,
    bg: &Background,
    n_perms: usize,
    seed: u64,
) -> Result<Attribution, ExplainError> {
    check_inputs(f, x, bg)?;
    if n_perms == 0 {
        return Err(ExplainError::InvalidInput(
            "n_perms must be at least 1".into(),
        ));
    }
    let m = x.len();
    let mut rng = stream_rng(seed, 0x5ba9);
    let mut order: Vec<usize> = (0..bg.len()).collect();
    order.shuffle(&mut rng);
    let mut perm: Vec<usize> = (0..m).collect();
    let mut phi = vec![0.0; m];
    let mut base = 0.0;
    let mut z: Vec<FeatureValue> = Vec::with_capacity(m);
    for p in 0..n_perms {
        let b = &bg.rows()[order[p % order.len()]];
        perm.shuffle(&mut rng);
        z.clear();
        z.extend_from_slice(b);
        let mut prev = f.positive_proba(&z);
        base += prev;
        for &j in &perm {
            if z[j] == x[j] {
                continue;
            }
            z[j] = x[j];
            let cur = f.positive_proba(&z);
            phi[j] += cur - prev;
            prev = cur;
        }
    }
    let n = n_perms as f64;
    phi.iter_mut().for_each(|p| *p /= n);
    Ok(Attribution {
        method: Method::McShap,
        phi0: base / n,
        phi,
        feature_names: f.schema().names(),
        seed: Some(seed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BinaryFn;
    use crate::schema::{Feature, FeatureSchema};

    fn reals(values: &[f64]) -> Instance {
        Instance::new(values.iter().map(|&v| FeatureValue::Real(v)).collect())
    }

    fn schema(m: usize) -> FeatureSchema {
        FeatureSchema::new(
            (0..m)
                .map(|j| Feature::continuous(format!("x{j}"), true))
                .collect(),
        )
        .unwrap()
    }

    fn additive() -> BinaryFn<impl Fn(&[FeatureValue]) -> f64 + Send + Sync> {
        BinaryFn::new(schema(2), |x: &[FeatureValue]| {
            x[0].as_f64() + x[1].as_f64()
        })
    }

    #[test]
    fn coalition_value_examples() {
        let f = additive();
        let x = reals(&[0.4, 0.6]);
        let bg = Background::new(vec![reals(&[0.0, 0.0])]).unwrap();
        assert_eq!(coalition_value(&f, &x, &[0, 1], &bg).unwrap(), 1.0);
        assert_eq!(coalition_value(&f, &x, &[], &bg).unwrap(), 0.0);
        assert_eq!(coalition_value(&f, &x, &[0], &bg).unwrap(), 0.4);
        assert!(coalition_value(&f, &x, &[2], &bg).is_err());
    }

    #[test]
    fn additive_closed_form() {
        let f = additive();
        let bg = Background::new(vec![reals(&[0.0, 0.0])]).unwrap();
        let a = shapley_exact(&f, &reals(&[0.4, 0.6]), &bg).unwrap();
        assert!((a.phi[0] - 0.4).abs() < 1e-15);
        assert!((a.phi[1] - 0.6).abs() < 1e-15);
        assert_eq!(a.phi0, 0.0);
    }

    #[test]
    fn weights_sum_to_one_over_subsets() {
        // sum over |S| of C(m-1, |S|) * w(|S|) = 1
        for m in 1..=12usize {
            let w = shapley_weights(m);
            let mut binom = 1.0;
            let mut total = 0.0;
            for (s, ws) in w.iter().enumerate() {
                total += binom * ws;
                binom = binom * (m - 1 - s) as f64 / (s + 1) as f64;
            }
            assert!((total - 1.0).abs() < 1e-12, "m={m}: {total}");
        }
    }

    #[test]
    fn too_many_features() {
        let f = BinaryFn::new(schema(4), |_: &[FeatureValue]| 0.5);
        let x = reals(&[0.1; 4]);
        let bg = Background::new(vec![reals(&[0.2; 4])]).unwrap();
        assert!(matches!(
            shapley_exact_with_limit(&f, &x, &bg, 3),
            Err(ExplainError::TooManyFeatures { m: 4, limit: 3 })
        ));
    }

    #[test]
    fn mc_is_deterministic_and_locally_accurate() {
        let f = BinaryFn::new(schema(3), |x: &[FeatureValue]| {
            0.2 * x[0].as_f64() + 0.5 * x[1].as_f64() * x[2].as_f64()
        });
        let x = reals(&[0.9, 0.8, 0.7]);
        let bg = Background::new(vec![reals(&[0.1, 0.2, 0.3]), reals(&[0.5, 0.1, 0.9])]).unwrap();
        let a = shapley_mc(&f, &x, &bg, 300, 7).unwrap();
        let b = shapley_mc(&f, &x, &bg, 300, 7).unwrap();
        assert_eq!(a, b);
        assert!((a.total() - f.positive_proba(&x)).abs() < 1e-9);
        assert!(shapley_mc(&f, &x, &bg, 0, 7).is_err());
    }

    #[test]
    fn empty_background_is_rejected() {
        assert!(Background::new(vec![]).is_err());
    }
}
