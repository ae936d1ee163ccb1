use rand::Rng;
use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::rng::stream_rng;
use crate::schema::{Dataset, Feature, FeatureKind, FeatureSchema, FeatureValue, Instance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SynthKind {
    /// Uniform over `n_categories` codes, or the given named categories.
    Categorical {
        #[serde(default)]
        n_categories: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        vocabulary: Option<Vec<String>>,
    },
    Continuous,
}

impl SynthKind {
    pub fn categories(n: usize) -> Self {
        SynthKind::Categorical {
            n_categories: n,
            vocabulary: None,
        }
    }

    pub fn named<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        let vocabulary: Vec<String> = names.into_iter().map(Into::into).collect();
        SynthKind::Categorical {
            n_categories: vocabulary.len(),
            vocabulary: Some(vocabulary),
        }
    }

    fn vocabulary(&self) -> Option<Vec<String>> {
        match self {
            SynthKind::Categorical {
                vocabulary: Some(v),
                ..
            } => Some(v.clone()),
            SynthKind::Categorical { n_categories, .. } => {
                Some((0..*n_categories).map(|c| c.to_string()).collect())
            }
            SynthKind::Continuous => None,
        }
    }
}

/// Makes a feature's latent value `rho * source + (1 - rho) * noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub source: String,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthFeature {
    pub name: String,
    pub kind: SynthKind,
    pub controllable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlated_with: Option<Correlation>,
}

impl SynthFeature {
    pub fn new<S: Into<String>>(name: S, kind: SynthKind, controllable: bool) -> Self {
        SynthFeature {
            name: name.into(),
            kind,
            controllable,
            correlated_with: None,
        }
    }

    pub fn correlated<S: Into<String>>(mut self, source: S, rho: f64) -> Self {
        self.correlated_with = Some(Correlation {
            source: source.into(),
            rho,
        });
        self
    }
}

/// `label = 1` iff `sum(weight * ordinal(feature)) > threshold`, then flipped with probability `noise`.
///
/// Ordinals are the continuous value, or `code / (n - 1)` for categories.
/// A missing threshold uses the median score, which balances the classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRule {
    pub weights: Vec<(String, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub features: Vec<SynthFeature>,
    pub rule: LinearRule,
    pub n_rows: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_classes")]
    pub classes: Vec<String>,
}

fn default_classes() -> Vec<String> {
    vec!["0".into(), "1".into()]
}

impl SynthSpec {
    /// `m_controllable` features `c0..` followed by `m_uncontrollable` features
    /// `u0..`, all continuous, labelled by a rule on the named features.
    pub fn simple(
        m_controllable: usize,
        m_uncontrollable: usize,
        weights: Vec<(String, f64)>,
        noise: f64,
        n_rows: usize,
        seed: u64,
    ) -> Self {
        let features = (0..m_controllable)
            .map(|j| SynthFeature::new(format!("c{j}"), SynthKind::Continuous, true))
            .chain(
                (0..m_uncontrollable)
                    .map(|j| SynthFeature::new(format!("u{j}"), SynthKind::Continuous, false)),
            )
            .collect();
        SynthSpec {
            features,
            rule: LinearRule {
                weights,
                threshold: None,
                noise,
            },
            n_rows,
            seed,
            classes: default_classes(),
        }
    }

    pub fn m_controllable(&self) -> usize {
        self.features.iter().filter(|f| f.controllable).count()
    }

    pub fn m_uncontrollable(&self) -> usize {
        self.features.len() - self.m_controllable()
    }

    pub fn schema(&self) -> Result<FeatureSchema, BenchError> {
        let features = self
            .features
            .iter()
            .map(|f| match f.kind.vocabulary() {
                Some(v) => Feature::categorical(f.name.clone(), v, f.controllable),
                None => Feature::continuous(f.name.clone(), f.controllable),
            })
            .collect();
        Ok(FeatureSchema::new(features)?)
    }

    fn validate(
        &self,
        schema: &FeatureSchema,
    ) -> Result<(Vec<Option<(usize, f64)>>, Vec<(usize, f64)>), BenchError> {
        if !(0.0..0.5).contains(&self.rule.noise) {
            return Err(BenchError::Config(format!(
                "noise {} outside [0, 0.5)",
                self.rule.noise
            )));
        }
        if self.classes.len() != 2 {
            return Err(BenchError::Config("synthetic tasks are binary".into()));
        }
        let lookup = |name: &str| {
            schema
                .index_of(name)
                .ok_or_else(|| BenchError::Config(format!("unknown feature `{name}`")))
        };
        let mut sources = Vec::with_capacity(self.features.len());
        for (j, f) in self.features.iter().enumerate() {
            if let SynthKind::Categorical { n_categories, .. } = f.kind {
                if n_categories == 0 {
                    return Err(BenchError::Config(format!(
                        "`{}` has no categories",
                        f.name
                    )));
                }
            }
            sources.push(match &f.correlated_with {
                None => None,
                Some(c) => {
                    let s = lookup(&c.source)?;
                    if s >= j {
                        return Err(BenchError::Config(format!(
                            "`{}` must be correlated with an earlier feature",
                            f.name
                        )));
                    }
                    if !(0.0..=1.0).contains(&c.rho) {
                        return Err(BenchError::Config(format!("rho {} outside [0, 1]", c.rho)));
                    }
                    Some((s, c.rho))
                }
            });
        }
        let weights = self
            .rule
            .weights
            .iter()
            .map(|(name, w)| Ok((lookup(name)?, *w)))
            .collect::<Result<Vec<_>, BenchError>>()?;
        Ok((sources, weights))
    }
}

/// Ordinal position of a value in `[0, 1]`.
pub(crate) fn ordinal(kind: &FeatureKind, v: FeatureValue) -> f64 {
    match (kind, v) {
        (FeatureKind::Categorical { vocabulary }, FeatureValue::Category(c))
            if vocabulary.len() > 1 =>
        {
            f64::from(c) / (vocabulary.len() - 1) as f64
        }
        (FeatureKind::Categorical { .. }, _) => 0.0,
        (FeatureKind::Continuous, v) => v.as_f64(),
    }
}

/// Samples rows i.i.d. and labels them with the spec's rule.
pub fn generate_synth(spec: &SynthSpec) -> Result<Dataset, BenchError> {
    let schema = spec.schema()?;
    let (sources, weights) = spec.validate(&schema)?;
    let mut rng = stream_rng(spec.seed, 0x5e17);
    let m = schema.len();
    let mut rows = Vec::with_capacity(spec.n_rows);
    let mut latent = vec![0.0; m];
    for _ in 0..spec.n_rows {
        let mut values = Vec::with_capacity(m);
        for j in 0..m {
            let noise: f64 = rng.random();
            latent[j] = match sources[j] {
                Some((s, rho)) => rho * latent[s] + (1.0 - rho) * noise,
                None => noise,
            };
            values.push(match schema.feature(j).kind.n_categories() {
                Some(n) => {
                    FeatureValue::Category(((latent[j] * n as f64) as usize).min(n - 1) as u32)
                }
                None => FeatureValue::Real(latent[j]),
            });
        }
        rows.push(Instance::new(values));
    }

    let scores: Vec<f64> = rows
        .iter()
        .map(|r| {
            weights
                .iter()
                .map(|&(j, w)| w * ordinal(&schema.feature(j).kind, r[j]))
                .sum()
        })
        .collect();
    let threshold = match spec.rule.threshold {
        Some(t) => t,
        None => {
            let mut sorted = scores.clone();
            sorted.sort_by(f64::total_cmp);
            sorted.get(sorted.len() / 2).copied().unwrap_or(0.0)
        }
    };
    let labels = scores
        .iter()
        .map(|&s| {
            let clean = usize::from(s > threshold);
            if rng.random::<f64>() < spec.rule.noise {
                1 - clean
            } else {
                clean
            }
        })
        .collect();
    Ok(Dataset::new(schema, rows, labels, spec.classes.clone())?)
}

/// Control measures of the COVID-style preset, in column order.
pub const COVID_MEASURES: [&str; 10] = [
    "SC", "MInd", "MOut", "DT", "IT", "HV", "CR", "PB", "SL", "NS",
];
/// Days a measure has been in force: not in force, then four duration buckets.
pub const COVID_BUCKETS: [&str; 5] = ["0", "1-5", "6-15", "16-30", ">30"];
pub const COVID_ROWS: usize = 3_936;

/// 3,936 region-days with ten controllable control measures coded by how
/// long they have been in force, and seven uncontrollable covariates.
/// The label (`rt_below_1`) is driven mostly by CR and PB, moderately by
/// recent cases and weakly by a few other measures and the weather.
pub fn covid_preset_spec(seed: u64) -> SynthSpec {
    let mut features: Vec<SynthFeature> = COVID_MEASURES
        .iter()
        .map(|m| SynthFeature::new(*m, SynthKind::named(COVID_BUCKETS), true))
        .collect();
    features.extend([
        SynthFeature::new("cases", SynthKind::Continuous, false),
        SynthFeature::new("cum_cases", SynthKind::Continuous, false).correlated("cases", 0.8),
        SynthFeature::new("deaths", SynthKind::Continuous, false).correlated("cum_cases", 0.7),
        SynthFeature::new("tests", SynthKind::Continuous, false).correlated("cases", 0.5),
        SynthFeature::new("temperature", SynthKind::Continuous, false),
        SynthFeature::new("humidity", SynthKind::Continuous, false),
        SynthFeature::new(
            "region",
            SynthKind::named((1..=12).map(|r| format!("R{r:02}"))),
            false,
        ),
    ]);
    let weights = [
        ("CR", 3.0),
        ("PB", 2.6),
        ("cases", -1.2),
        ("SC", 0.6),
        ("MOut", 0.5),
        ("SL", 0.4),
        ("temperature", 0.3),
    ];
    SynthSpec {
        features,
        rule: LinearRule {
            weights: weights.iter().map(|(n, w)| (n.to_string(), *w)).collect(),
            threshold: None,
            noise: 0.03,
        },
        n_rows: COVID_ROWS,
        seed,
        classes: vec!["rt_above_1".into(), "rt_below_1".into()],
    }
}

pub fn covid_preset(seed: u64) -> Result<Dataset, BenchError> {
    generate_synth(&covid_preset_spec(seed))
}

pub const LUNG_ROWS: usize = 2_242;

/// Mixed-type 28-feature stand-in for a lung-cancer registry extract:
/// age, ethnicity, sex and height are uncontrollable, the 24 lifestyle,
/// exposure and clinical features are controllable.
pub fn lung_preset_spec(seed: u64) -> SynthSpec {
    use SynthKind::Continuous as Cont;
    let yes_no = || SynthKind::named(["no", "yes"]);
    let features = vec![
        SynthFeature::new("age", Cont, false),
        SynthFeature::new("ethnicity", SynthKind::categories(6), false),
        SynthFeature::new("sex", SynthKind::named(["female", "male"]), false),
        SynthFeature::new("height", Cont, false).correlated("sex", 0.5),
        SynthFeature::new("weight", Cont, true).correlated("height", 0.5),
        SynthFeature::new("bmi", Cont, true).correlated("weight", 0.7),
        SynthFeature::new(
            "smoking_status",
            SynthKind::named(["never", "former", "current"]),
            true,
        ),
        SynthFeature::new("pack_years", Cont, true).correlated("smoking_status", 0.8),
        SynthFeature::new("alcohol_units", Cont, true),
        SynthFeature::new("physical_activity", Cont, true),
        SynthFeature::new("diet_score", Cont, true),
        SynthFeature::new("air_pollution", Cont, true),
        SynthFeature::new("asbestos_exposure", yes_no(), true),
        SynthFeature::new("radon_exposure", Cont, true),
        SynthFeature::new("occupation_risk", SynthKind::categories(4), true),
        SynthFeature::new("screening", yes_no(), true),
        SynthFeature::new("cholesterol", Cont, true),
        SynthFeature::new("blood_pressure", Cont, true).correlated("age", 0.4),
        SynthFeature::new("diabetes", yes_no(), true),
        SynthFeature::new("copd", yes_no(), true).correlated("pack_years", 0.4),
        SynthFeature::new("cough_treatment", yes_no(), true),
        SynthFeature::new("vitamin_d", Cont, true),
        SynthFeature::new("sleep_hours", Cont, true),
        SynthFeature::new(
            "stress_level",
            SynthKind::named(["low", "medium", "high"]),
            true,
        ),
        SynthFeature::new("secondhand_smoke", yes_no(), true),
        SynthFeature::new("fruit_veg_portions", Cont, true),
        SynthFeature::new("sedentary_hours", Cont, true),
        SynthFeature::new("e_cigarette", yes_no(), true),
    ];
    let weights = [
        ("age", 2.0),
        ("smoking_status", 2.5),
        ("pack_years", 2.0),
        ("asbestos_exposure", 1.0),
        ("copd", 1.0),
        ("air_pollution", 0.8),
        ("radon_exposure", 0.6),
        ("physical_activity", -0.7),
        ("fruit_veg_portions", -0.5),
    ];
    SynthSpec {
        features,
        rule: LinearRule {
            weights: weights.iter().map(|(n, w)| (n.to_string(), *w)).collect(),
            threshold: None,
            noise: 0.05,
        },
        n_rows: LUNG_ROWS,
        seed,
        classes: vec!["no_cancer".into(), "cancer".into()],
    }
}

pub fn lung_preset(seed: u64) -> Result<Dataset, BenchError> {
    generate_synth(&lung_preset_spec(seed))
}

/// Mutual information (nats) between the label and feature `j`; continuous
/// features are binned into `bins` equal-width bins.
pub fn mutual_information(data: &Dataset, j: usize, bins: usize) -> f64 {
    let kind = &data.schema().feature(j).kind;
    let n_values = kind.n_categories().unwrap_or(bins.max(1));
    let n_classes = data.n_classes();
    let mut joint = vec![0.0; n_values * n_classes];
    for (row, &label) in data.rows().iter().zip(data.labels()) {
        let v = match row[j] {
            FeatureValue::Category(c) => c as usize,
            FeatureValue::Real(r) => ((r * n_values as f64) as usize).min(n_values - 1),
        };
        joint[v * n_classes + label] += 1.0;
    }
    let n = data.len() as f64;
    let pv: Vec<f64> = (0..n_values)
        .map(|v| {
            (0..n_classes)
                .map(|c| joint[v * n_classes + c])
                .sum::<f64>()
                / n
        })
        .collect();
    let pc: Vec<f64> = (0..n_classes)
        .map(|c| (0..n_values).map(|v| joint[v * n_classes + c]).sum::<f64>() / n)
        .collect();
    let mut mi = 0.0;
    for v in 0..n_values {
        for c in 0..n_classes {
            let p = joint[v * n_classes + c] / n;
            if p > 0.0 {
                mi += p * (p / (pv[v] * pc[c])).ln();
            }
        }
    }
    mi
}
