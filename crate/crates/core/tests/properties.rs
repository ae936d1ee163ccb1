mod common;

use cafa::distance::{delta, DistanceParams};
use cafa::explain::{shapley_exact, shapley_mc, Background};
use cafa::model::{BinaryFn, PredictFn};
use cafa::rng::stream_rng;
use cafa::sampler::{generate_neighborhood, perturb_once, SampleError, SamplerConfig};
use cafa::schema::{
    denormalize, load_csv_from_reader, normalize, Dataset, Feature, FeatureKind, FeatureSchema,
    FeatureValue, IngestSpec, Instance,
};
use common::*;
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_is_a_bounded_pseudometric(m in 1usize..8, seed: u64) {
        let schema = random_schema(m, seed);
        let p = DistanceParams::from_schema(&schema);
        let mut rng = stream_rng(seed, 9);
        for _ in 0..20 {
            let a = random_instance(&schema, &mut rng);
            let b = random_instance(&schema, &mut rng);
            let c = random_instance(&schema, &mut rng);
            let ab = delta(&schema, &p, &a, &b).unwrap();
            prop_assert_eq!(ab, delta(&schema, &p, &b, &a).unwrap());
            prop_assert_eq!(delta(&schema, &p, &a, &a).unwrap(), 0.0);
            prop_assert!((0.0..=1.0).contains(&ab));
            let ac = delta(&schema, &p, &a, &c).unwrap();
            let bc = delta(&schema, &p, &b, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert!((ab - oracle_delta(&schema, &a, &b)).abs() <= 1e-12);
        }
    }

    #[test]
    fn normalization_round_trips(v in -1e3f64..1e3, lo in -1e3f64..0.0, width in 1e-3f64..1e3) {
        let hi = lo + width;
        let inside = lo + (v.abs() % width);
        let back = denormalize(normalize(inside, lo, hi).unwrap(), lo, hi).unwrap();
        prop_assert!((back - inside).abs() <= 1e-12 * (1.0 + inside.abs()));
        let s = normalize(v, lo, hi).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn ingestion_respects_schema_and_is_deterministic(
        n_rows in 2usize..30,
        cols in prop::collection::vec(any::<bool>(), 1..5),
        seed: u64,
    ) {
        let mut rng = stream_rng(seed, 3);
        let mut text = String::new();
        let names: Vec<String> = (0..cols.len()).map(|j| format!("c{j}")).collect();
        text.push_str(&names.join(","));
        text.push_str(",y\n");
        let mut cells: Vec<Vec<String>> = Vec::new();
        for i in 0..n_rows {
            let mut row: Vec<String> = cols
                .iter()
                .map(|&cat| if cat {
                    ["red", "green", "blue"][rng.random_range(0..3)].to_string()
                } else {
                    format!("{:.3}", rng.random_range(-50.0..50.0))
                })
                .collect();
            // continuous columns must not be constant
            for (j, &cat) in cols.iter().enumerate() {
                if !cat && i < 2 {
                    row[j] = format!("{}", i as f64 * 100.0 - 50.0);
                }
            }
            row.push(if i % 2 == 0 { "a".into() } else { "b".into() });
            text.push_str(&row.join(","));
            text.push('\n');
            cells.push(row);
        }
        let spec_json = format!(
            r#"{{"label": "y", "features": [{}]}}"#,
            cols.iter()
                .enumerate()
                .map(|(j, &cat)| format!(
                    r#"{{"name": "c{j}", "kind": "{}", "controllable": {}}}"#,
                    if cat { "cat" } else { "cont" },
                    j % 2 == 0
                ))
                .collect::<Vec<_>>()
                .join(",")
        );
        let spec = IngestSpec::from_json(&spec_json).unwrap();
        let a = load_csv_from_reader(text.as_bytes(), &spec).unwrap();
        let b = load_csv_from_reader(text.as_bytes(), &spec).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), n_rows);
        for row in a.rows() {
            prop_assert!(a.schema().check(row).is_ok());
            for v in row.iter() {
                if let FeatureValue::Real(r) = v {
                    prop_assert!((0.0..=1.0).contains(r));
                }
            }
        }
        // continuous cells map back to their raw values
        for (j, &cat) in cols.iter().enumerate() {
            if !cat {
                let p = a.norm_params()[j].unwrap();
                for (i, row) in a.rows().iter().enumerate() {
                    let raw: f64 = cells[i][j].parse().unwrap();
                    prop_assert!((p.denormalize(row[j].as_f64()) - raw).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn perturbation_copies_uncontrollables(m in 1usize..8, seed: u64) {
        let schema = random_schema(m, seed);
        let mut rng = stream_rng(seed, 4);
        let x = random_instance(&schema, &mut rng);
        for _ in 0..20 {
            let z = perturb_once(&x, &schema, 0.25, &mut rng);
            prop_assert!(schema.check(&z).is_ok());
            for j in schema.uncontrollable() {
                prop_assert_eq!(z[j], x[j]);
            }
        }
    }

    #[test]
    fn exact_shapley_matches_enumeration_on_forests(m in 2usize..7, seed: u64) {
        let schema = random_schema(m, seed);
        let data = random_dataset(&schema, 60, seed);
        let f = small_forest(&data, seed);
        let bg_rows: Vec<Instance> = data.rows()[..8].to_vec();
        let bg = Background::new(bg_rows.clone()).unwrap();
        let x = data.row(20);
        let a = shapley_exact(&f, x, &bg).unwrap();
        let (phi0, phi) = brute_force_shapley(&f, x, &bg_rows);
        prop_assert!((a.phi0 - phi0).abs() <= 1e-9);
        for j in 0..m {
            prop_assert!((a.phi[j] - phi[j]).abs() <= 1e-9, "feature {}: {} vs {}", j, a.phi[j], phi[j]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn efficiency_holds_for_exact_and_mc(m in 1usize..7, seed: u64) {
        let schema = random_schema(m, seed);
        let data = random_dataset(&schema, 50, seed);
        let f = small_forest(&data, seed);
        let bg = Background::new(data.rows()[..10].to_vec()).unwrap();
        let x = data.row(30);
        let fx = f.positive_proba(x);
        let exact = shapley_exact(&f, x, &bg).unwrap();
        prop_assert!((exact.total() - fx).abs() <= 1e-6);
        let mc = shapley_mc(&f, x, &bg, 64, seed).unwrap();
        prop_assert!((mc.total() - fx).abs() <= 1e-6);
    }

    #[test]
    fn unread_features_get_zero(m in 2usize..7, dummy in 0usize..7, seed: u64) {
        let dummy = dummy % m;
        let schema = random_schema(m, seed);
        let kinds: Vec<FeatureKind> = schema.features().iter().map(|f| f.kind.clone()).collect();
        let f = BinaryFn::new(schema.clone(), move |z: &[FeatureValue]| {
            let mut s = 0.0;
            for (j, k) in kinds.iter().enumerate() {
                if j != dummy {
                    s += (j as f64 + 1.0) * ordinal(k, z[j]);
                }
            }
            (s.sin() + 1.0) / 2.0
        });
        let mut rng = stream_rng(seed, 5);
        let bg = Background::new((0..6).map(|_| random_instance(&schema, &mut rng)).collect()).unwrap();
        let x = random_instance(&schema, &mut rng);
        prop_assert_eq!(shapley_exact(&f, &x, &bg).unwrap().phi[dummy], 0.0);
        prop_assert_eq!(shapley_mc(&f, &x, &bg, 50, seed).unwrap().phi[dummy], 0.0);
    }

    #[test]
    fn symmetric_features_share_credit(m in 2usize..7, seed: u64) {
        // features 0 and 1 are continuous and enter the model symmetrically
        let mut features = vec![Feature::continuous("s0", true), Feature::continuous("s1", true)];
        let rest = random_schema(m, seed);
        features.extend(rest.features()[..m - 2].iter().enumerate().map(|(j, f)| Feature {
            name: format!("r{j}"),
            ..f.clone()
        }));
        let schema = FeatureSchema::new(features).unwrap();
        let kinds: Vec<FeatureKind> = schema.features().iter().map(|f| f.kind.clone()).collect();
        let f = BinaryFn::new(schema.clone(), move |z: &[FeatureValue]| {
            let (a, b) = (z[0].as_f64(), z[1].as_f64());
            let other: f64 = (2..kinds.len()).map(|j| ordinal(&kinds[j], z[j])).sum();
            (a * b + (a + b) * other * 0.3 + (a * a + b * b) * 0.2).tanh()
        });
        let mut rng = stream_rng(seed, 6);
        let mut rows = Vec::new();
        for _ in 0..5 {
            let r = random_instance(&schema, &mut rng);
            let mut swapped = r.clone();
            swapped.values_mut().swap(0, 1);
            rows.push(r);
            rows.push(swapped);
        }
        let bg = Background::new(rows).unwrap();
        let mut x = random_instance(&schema, &mut rng);
        x.values_mut()[1] = x[0];
        let a = shapley_exact(&f, &x, &bg).unwrap();
        prop_assert!((a.phi[0] - a.phi[1]).abs() <= 1e-9, "{} vs {}", a.phi[0], a.phi[1]);
    }
}

/// Model whose decision boundary passes through `x`, so perturbations land on both sides.
fn boundary_model(schema: &FeatureSchema, x: &Instance) -> impl PredictFn {
    let kinds: Vec<FeatureKind> = schema.features().iter().map(|f| f.kind.clone()).collect();
    let fc = schema.controllable();
    let score = move |z: &[FeatureValue]| fc.iter().map(|&j| ordinal(&kinds[j], z[j])).sum::<f64>();
    let center = score(x);
    BinaryFn::new(schema.clone(), move |z: &[FeatureValue]| {
        1.0 / (1.0 + (-8.0 * (score(z) - center)).exp())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn neighborhoods_are_close_balanced_and_labelled_by_f(
        m in 1usize..7,
        pi in 0.3f64..1.0,
        k in 1usize..25,
        seed: u64,
    ) {
        let schema = random_schema(m, seed);
        let mut rng = stream_rng(seed, 7);
        let x = random_instance(&schema, &mut rng);
        let f = boundary_model(&schema, &x);
        match generate_neighborhood(&x, &f, &schema, pi, k, &SamplerConfig::default(), seed) {
            Ok(nb) => {
                let counts = nb.data.class_counts();
                prop_assert!(counts.iter().all(|&c| c == 0 || c == k));
                prop_assert!(counts.iter().filter(|&&c| c == k).count() >= 2);
                for (row, &label) in nb.data.rows().iter().zip(nb.data.labels()) {
                    prop_assert!(oracle_delta(&schema, &x, row) <= pi + 1e-12);
                    for j in schema.uncontrollable() {
                        prop_assert_eq!(row[j], x[j]);
                    }
                    prop_assert_eq!(f.predict_class(row), label);
                }
            }
            Err(SampleError::Imbalance { .. }) => {}
            Err(e) => prop_assert!(false, "unexpected error {}", e),
        }
    }

    #[test]
    fn forest_ignores_row_order(m in 1usize..5, seed: u64) {
        let schema = random_schema(m, seed);
        let data = random_dataset(&schema, 40, seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.reverse();
        let shuffled: Dataset = data.subset(&order).unwrap();
        let a = small_forest(&data, seed);
        let b = small_forest(&shuffled, seed);
        let mut rng = stream_rng(seed, 8);
        for _ in 0..20 {
            let z = random_instance(&schema, &mut rng);
            prop_assert!((a.positive_proba(&z) - b.positive_proba(&z)).abs() <= 1e-12);
        }
    }
}
