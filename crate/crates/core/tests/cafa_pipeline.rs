mod common;

use cafa::bench::{generate_synth, LinearRule, SynthFeature, SynthKind, SynthSpec};
use cafa::cafa::{
    cafa_global, cafa_local, compare_with_shap, CafaConfig, CafaError, Explainer, Proximity,
};
use cafa::explain::{shapley_exact, Background};
use cafa::model::{train_forest, BinaryFn, ForestParams, PredictFn};
use cafa::rng::stream_rng;
use cafa::sampler::SampleError;
use cafa::schema::{Feature, FeatureSchema, FeatureValue, Instance};
use common::*;

fn quick_config(seed: u64) -> CafaConfig {
    CafaConfig {
        k: 40,
        proximity: Proximity::Fixed { pi: 0.6 },
        surrogate: ForestParams {
            n_trees: 20,
            max_depth: 6,
            ..ForestParams::default()
        },
        explainer: Explainer::Exact,
        n_locals: Some(30),
        background_size: 25,
        seed,
        ..CafaConfig::default()
    }
}

fn fixture(seed: u64) -> (FeatureSchema, cafa::model::RandomForest, Vec<Instance>) {
    let schema = FeatureSchema::new(vec![
        Feature::continuous("age", false),
        Feature::coded("group", 3, false),
        Feature::continuous("dose", true),
        Feature::coded("diet", 4, true),
        Feature::continuous("exercise", true),
    ])
    .unwrap();
    let data = random_dataset(&schema, 300, seed);
    let f = small_forest(&data, seed);
    (schema, f, data.rows()[..6].to_vec())
}

#[test]
fn uncontrollable_features_are_exactly_zero() {
    let (schema, f, xs) = fixture(1);
    for (i, x) in xs.iter().enumerate().take(3) {
        let r = cafa_local(x, &f, &schema, &quick_config(i as u64)).unwrap();
        assert_eq!(r.attribution.phi[0], 0.0);
        assert_eq!(r.attribution.phi[1], 0.0);
        assert_eq!(r.importance[0], 0.0);
        assert_eq!(
            r.zeros_enforced,
            vec!["age".to_string(), "group".to_string()]
        );
        for local in &r.locals {
            assert_eq!(local.phi[0], 0.0);
            assert_eq!(local.phi[1], 0.0);
        }
    }
}

#[test]
fn attribution_is_the_mean_of_per_row_explanations() {
    let (schema, f, xs) = fixture(2);
    let r = cafa_local(&xs[0], &f, &schema, &quick_config(5)).unwrap();
    let n = r.locals.len() as f64;
    for j in 0..schema.len() {
        let mean: f64 = r.locals.iter().map(|a| a.phi[j]).sum::<f64>() / n;
        assert!((r.attribution.phi[j] - mean).abs() <= 1e-12);
        let mean_abs: f64 = r.locals.iter().map(|a| a.phi[j].abs()).sum::<f64>() / n;
        assert!((r.importance[j] - mean_abs).abs() <= 1e-12);
    }
    let phi0: f64 = r.locals.iter().map(|a| a.phi0).sum::<f64>() / n;
    assert!((r.attribution.phi0 - phi0).abs() <= 1e-12);
}

#[test]
fn efficiency_holds_on_average() {
    let (schema, f, xs) = fixture(3);
    for explainer in [Explainer::Exact, Explainer::Mc { n_perms: 40 }] {
        let cfg = CafaConfig {
            explainer,
            ..quick_config(9)
        };
        let r = cafa_local(&xs[1], &f, &schema, &cfg).unwrap();
        let mean_g: f64 = r
            .explained_rows
            .iter()
            .map(|&i| r.surrogate.positive_proba(r.sample.data.row(i)))
            .sum::<f64>()
            / r.explained_rows.len() as f64;
        assert!(
            (r.attribution.total() - mean_g).abs() <= 1e-6,
            "{explainer}"
        );
    }
}

#[test]
fn explanations_use_the_neighborhood_as_background() {
    // an independent recomputation of one per-row explanation
    let (schema, f, xs) = fixture(4);
    let cfg = CafaConfig {
        background_size: 5_000,
        ..quick_config(11)
    };
    let r = cafa_local(&xs[2], &f, &schema, &cfg).unwrap();
    let bg = Background::new(r.sample.data.rows().to_vec()).unwrap();
    let row = r.explained_rows[0];
    let expected = shapley_exact(&r.surrogate, r.sample.data.row(row), &bg).unwrap();
    assert_eq!(r.locals[0].phi, expected.phi);
}

#[test]
fn same_seed_same_result() {
    let (schema, f, xs) = fixture(5);
    let a = cafa_local(&xs[0], &f, &schema, &quick_config(3)).unwrap();
    let b = cafa_local(&xs[0], &f, &schema, &quick_config(3)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let c = cafa_local(&xs[0], &f, &schema, &quick_config(4)).unwrap();
    assert_ne!(a.attribution, c.attribution);
}

#[test]
fn json_report_layout() {
    let (schema, f, xs) = fixture(6);
    let r = cafa_local(&xs[0], &f, &schema, &quick_config(1)).unwrap();
    let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    assert_eq!(v["method"], "cafa");
    assert_eq!(v["zeros_enforced"][0], "age");
    assert_eq!(v["neighborhood"]["k"], 40);
    assert_eq!(v["neighborhood"]["pi"], 0.6);
    assert!(v["surrogate_accuracy"].as_f64().unwrap() > 0.5);
    assert_eq!(v["phi"].as_array().unwrap().len(), 5);
    assert_eq!(v["seed"], 1);
}

#[test]
fn global_of_one_instance_is_its_local_run() {
    let (schema, f, xs) = fixture(7);
    let cfg = quick_config(21);
    let g = cafa_global(&xs[..1], &f, &schema, &cfg).unwrap();
    let local = cafa_local(&xs[0], &f, &schema, &cfg.for_instance(0)).unwrap();
    assert_eq!(g.mean_phi(), &local.attribution.phi[..]);
    assert_eq!(g.importance, local.importance);
}

#[test]
fn global_of_two_instances_is_their_mean() {
    let (schema, f, xs) = fixture(8);
    let cfg = quick_config(22);
    let g = cafa_global(&xs[..2], &f, &schema, &cfg).unwrap();
    let a = cafa_local(&xs[0], &f, &schema, &cfg.for_instance(0)).unwrap();
    let b = cafa_local(&xs[1], &f, &schema, &cfg.for_instance(1)).unwrap();
    for j in 0..schema.len() {
        let mean = (a.attribution.phi[j] + b.attribution.phi[j]) / 2.0;
        let mean_abs = (a.attribution.phi[j].abs() + b.attribution.phi[j].abs()) / 2.0;
        assert!((g.mean_phi()[j] - mean).abs() <= 1e-15);
        assert!((g.mean_abs_phi()[j] - mean_abs).abs() <= 1e-15);
    }
    assert!(g.failures.is_empty());
}

#[test]
fn global_skips_and_reports_failing_instances() {
    // below u = 0.5 the prediction is constant, so no neighborhood can be balanced
    let schema = FeatureSchema::new(vec![
        Feature::continuous("u", false),
        Feature::continuous("c", true),
    ])
    .unwrap();
    let f = BinaryFn::new(schema.clone(), |z: &[FeatureValue]| {
        if z[0].as_f64() > 0.5 {
            z[1].as_f64()
        } else {
            0.0
        }
    });
    let at = |u: f64| Instance::new(vec![FeatureValue::Real(u), FeatureValue::Real(0.5)]);
    let g = cafa_global(&[at(0.9), at(0.1), at(0.8)], &f, &schema, &quick_config(0)).unwrap();
    assert_eq!(g.failures.len(), 1);
    assert_eq!(g.failures[0].0, 1);
    assert_eq!(
        g.per_instance.iter().map(|(i, _)| *i).collect::<Vec<_>>(),
        vec![0, 2]
    );
    assert_eq!(g.global.n, 2);
    assert_eq!(g.mean_phi()[0], 0.0);

    let err = cafa_global(&[at(0.1), at(0.2)], &f, &schema, &quick_config(0)).unwrap_err();
    assert!(matches!(err, CafaError::AllFailed(2)));
}

#[test]
fn no_controllable_features_means_no_neighborhood() {
    let schema = FeatureSchema::new(vec![
        Feature::continuous("u0", false),
        Feature::coded("u1", 3, false),
    ])
    .unwrap();
    let f = BinaryFn::new(schema.clone(), |z: &[FeatureValue]| z[0].as_f64());
    let x = Instance::new(vec![FeatureValue::Real(0.4), FeatureValue::Category(1)]);
    let err = cafa_local(&x, &f, &schema, &quick_config(0)).unwrap_err();
    assert!(
        matches!(err, CafaError::Neighborhood(SampleError::Imbalance { .. })),
        "{err}"
    );
}

#[test]
fn model_reading_only_uncontrollables_cannot_be_explained() {
    let schema = FeatureSchema::new(vec![
        Feature::continuous("u", false),
        Feature::continuous("c0", true),
        Feature::coded("c1", 3, true),
    ])
    .unwrap();
    let f = BinaryFn::new(schema.clone(), |z: &[FeatureValue]| z[0].as_f64());
    let x = Instance::new(vec![
        FeatureValue::Real(0.7),
        FeatureValue::Real(0.2),
        FeatureValue::Category(0),
    ]);
    match cafa_local(&x, &f, &schema, &quick_config(0)) {
        Err(CafaError::Neighborhood(SampleError::Imbalance { counts, .. })) => {
            assert_eq!(counts.iter().filter(|&&c| c > 0).count(), 1);
        }
        Ok(r) => assert!(r.attribution.phi.iter().all(|&p| p == 0.0)),
        Err(e) => panic!("unexpected error {e}"),
    }
}

#[test]
fn correlation_needs_two_controllable_features() {
    let schema = FeatureSchema::new(vec![
        Feature::continuous("u", false),
        Feature::continuous("c", true),
    ])
    .unwrap();
    let f = BinaryFn::new(schema.clone(), |z: &[FeatureValue]| z[1].as_f64());
    let x = Instance::new(vec![FeatureValue::Real(0.5), FeatureValue::Real(0.5)]);
    let bg = Background::new(vec![x.clone()]).unwrap();
    let err = compare_with_shap(&x, &f, &schema, &quick_config(0), &bg).unwrap_err();
    assert!(matches!(err, CafaError::InvalidConfig(_)));
}

#[test]
fn invalid_configs_are_rejected() {
    let (schema, f, xs) = fixture(9);
    for cfg in [
        CafaConfig {
            k: 0,
            ..quick_config(0)
        },
        CafaConfig {
            n_locals: Some(0),
            ..quick_config(0)
        },
        CafaConfig {
            n_locals: Some(10_000),
            ..quick_config(0)
        },
        CafaConfig {
            background_size: 0,
            ..quick_config(0)
        },
    ] {
        assert!(matches!(
            cafa_local(&xs[0], &f, &schema, &cfg),
            Err(CafaError::InvalidConfig(_))
        ));
    }
}

/// Characterization: retraining on controllable features only is not CAFA.
/// Here `u` drives the label and `proxy` is a noisy copy of `u`; a model
/// without `u` leans on the proxy, while CAFA holds `u` fixed and credits
/// the feature that actually moves the original model.
#[test]
fn cafa_differs_from_shap_on_a_controllable_only_model() {
    let spec = SynthSpec {
        features: vec![
            SynthFeature::new("u", SynthKind::Continuous, false),
            SynthFeature::new("proxy", SynthKind::Continuous, true).correlated("u", 0.85),
            SynthFeature::new("lever", SynthKind::Continuous, true),
            SynthFeature::new("noise", SynthKind::Continuous, true),
        ],
        rule: LinearRule {
            weights: vec![("u".into(), 3.0), ("lever".into(), 1.0)],
            threshold: None,
            noise: 0.0,
        },
        n_rows: 800,
        seed: 13,
        classes: vec!["0".into(), "1".into()],
    };
    let data = generate_synth(&spec).unwrap();
    // every split sees every feature, so `f` prefers `u` over its proxy
    let full = ForestParams {
        features_per_split: Some(4),
        ..ForestParams::default().with_seed(1)
    };
    let f = train_forest(&data, &full).unwrap();

    let fc = data.schema().controllable();
    let naive_schema = FeatureSchema::new(
        fc.iter()
            .map(|&j| data.schema().feature(j).clone())
            .collect(),
    )
    .unwrap();
    let project = |x: &Instance| Instance::new(fc.iter().map(|&j| x[j]).collect());
    let naive_data = cafa::schema::Dataset::new(
        naive_schema.clone(),
        data.rows().iter().map(project).collect(),
        data.labels().to_vec(),
        data.classes().to_vec(),
    )
    .unwrap();
    let naive = train_forest(&naive_data, &ForestParams::default().with_seed(1)).unwrap();
    let naive_bg = Background::sample(&naive_data, 60, 3).unwrap();

    let mut rng = stream_rng(5, 0);
    let mut naive_imp = vec![0.0; fc.len()];
    let mut cafa_imp = vec![0.0; fc.len()];
    let cfg = CafaConfig {
        k: 100,
        explainer: Explainer::Exact,
        n_locals: Some(60),
        background_size: 60,
        surrogate: ForestParams {
            n_trees: 40,
            ..ForestParams::default()
        },
        ..CafaConfig::default()
    }
    .resolve(&data)
    .unwrap();
    let mut used = 0;
    for t in 0..40 {
        if used == 6 {
            break;
        }
        let x = data.row(rand::Rng::random_range(&mut rng, 0..data.len()));
        let Ok(r) = cafa_local(x, &f, data.schema(), &cfg.for_instance(t)) else {
            continue;
        };
        used += 1;
        let s = shapley_exact(&naive, &project(x), &naive_bg).unwrap();
        for (k, &j) in fc.iter().enumerate() {
            cafa_imp[k] += r.importance[j];
            naive_imp[k] += s.phi[k].abs();
        }
    }
    assert!(used >= 3, "too few explainable instances");
    let top = |v: &[f64]| (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
    let names = naive_schema.names();
    assert_eq!(names[top(&naive_imp)], "proxy", "naive {naive_imp:?}");
    assert_eq!(names[top(&cafa_imp)], "lever", "cafa {cafa_imp:?}");
}
