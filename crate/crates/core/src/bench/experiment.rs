use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::svg::{bar_chart, beeswarm, BarSeries, SwarmPanel};
use super::synth::{covid_preset, generate_synth, lung_preset, ordinal, SynthSpec};
use super::BenchError;
use crate::cafa::{
    cafa_global, cafa_local, pearson, standard_shap, CafaConfig, CafaGlobal, CafaResult,
};
use crate::datasets::breast_cancer;
use crate::explain::{global_explanation, Attribution, Background, GlobalExplanation};
use crate::model::{train_forest, ForestParams, RandomForest};
use crate::rng::mix;
use crate::schema::{load_csv, Dataset, IngestSpec, Instance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        spec: PathBuf,
    },
    BreastCancer,
    CovidPreset {
        #[serde(default)]
        seed: u64,
    },
    LungPreset {
        #[serde(default)]
        seed: u64,
    },
    Synth(SynthSpec),
}

impl DatasetSource {
    /// Relative CSV paths are resolved against `base`.
    pub fn load(&self, base: &Path) -> Result<Dataset, BenchError> {
        Ok(match self {
            DatasetSource::Csv { path, spec } => {
                let spec = IngestSpec::from_path(base.join(spec))?;
                load_csv(base.join(path), &spec)?
            }
            DatasetSource::BreastCancer => breast_cancer()?,
            DatasetSource::CovidPreset { seed } => covid_preset(*seed)?,
            DatasetSource::LungPreset { seed } => lung_preset(*seed)?,
            DatasetSource::Synth(spec) => generate_synth(spec)?,
        })
    }
}

fn default_sample_size() -> usize {
    100
}

fn default_test_fraction() -> f64 {
    0.3
}

fn default_background() -> usize {
    100
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub model: ForestParams,
    #[serde(default)]
    pub cafa: CafaConfig,
    /// Instances explained in the global pass.
    #[serde(default = "default_sample_size")]
    pub sample_size: usize,
    /// Dataset row explained locally; defaults to the first held-out row.
    #[serde(default)]
    pub instance: Option<usize>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Training rows used as the background of standard SHAP.
    #[serde(default = "default_background")]
    pub shap_background: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub svg_timestamp: bool,
}

const REQUIRED_KEYS: &str = "required keys: dataset {type: csv|breast_cancer|covid_preset|lung_preset|synth}; \
optional: model, cafa, sample_size, instance, test_fraction, shap_background, seed, output_dir, svg_timestamp";

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        if value
            .as_object()
            .is_some_and(|o| !o.contains_key("dataset"))
        {
            return Err(BenchError::Usage(format!(
                "experiment config is missing `dataset`; {REQUIRED_KEYS}"
            )));
        }
        serde_json::from_value(value)
            .map_err(|e| BenchError::Usage(format!("{e}; {REQUIRED_KEYS}")))
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Self, BenchError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<(), BenchError> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(BenchError::Config(format!(
                "test_fraction {} outside (0, 1)",
                self.test_fraction
            )));
        }
        if self.sample_size == 0 || self.shap_background == 0 {
            return Err(BenchError::Config(
                "sample_size and shap_background must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Everything an experiment computed.
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub resolved_cafa: CafaConfig,
    pub data: Dataset,
    pub model: RandomForest,
    pub test_accuracy: f64,
    pub instance_row: usize,
    pub shap_local: Attribution,
    pub cafa_local: CafaResult,
    pub sample_rows: Vec<usize>,
    pub shap_locals: Vec<Attribution>,
    pub shap_global: GlobalExplanation,
    pub cafa_global: CafaGlobal,
}

impl ExperimentReport {
    /// Pearson correlation of the local SHAP and CAFA vectors over controllable features,
    /// as `(signed, magnitude)`; `None` where undefined.
    pub fn local_correlation(&self) -> (Option<f64>, Option<f64>) {
        let fc = self.data.schema().controllable();
        let shap: Vec<f64> = fc.iter().map(|&j| self.shap_local.phi[j]).collect();
        let shap_abs: Vec<f64> = shap.iter().map(|v| v.abs()).collect();
        let cafa: Vec<f64> = fc
            .iter()
            .map(|&j| self.cafa_local.attribution.phi[j])
            .collect();
        let imp: Vec<f64> = fc.iter().map(|&j| self.cafa_local.importance[j]).collect();
        (pearson(&shap, &cafa).ok(), pearson(&shap_abs, &imp).ok())
    }

    pub fn attribution_csv(&self) -> Result<Vec<u8>, BenchError> {
        let schema = self.data.schema();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "feature",
            "controllable",
            "shap_local",
            "cafa_local",
            "cafa_local_mean_abs",
            "shap_global_mean_abs",
            "cafa_global_mean",
            "cafa_global_mean_abs",
            "cafa_global_importance",
        ])?;
        for j in 0..schema.len() {
            let f = schema.feature(j);
            w.write_record([
                f.name.clone(),
                f.controllable.to_string(),
                self.shap_local.phi[j].to_string(),
                self.cafa_local.attribution.phi[j].to_string(),
                self.cafa_local.importance[j].to_string(),
                self.shap_global.mean_abs_phi[j].to_string(),
                self.cafa_global.mean_phi()[j].to_string(),
                self.cafa_global.mean_abs_phi()[j].to_string(),
                self.cafa_global.importance[j].to_string(),
            ])?;
        }
        w.into_inner().map_err(|e| BenchError::Io(e.into_error()))
    }

    pub fn attribution_json(&self) -> Result<String, BenchError> {
        let (signed, magnitude) = self.local_correlation();
        let names = self.data.schema().names();
        let doc = json!({
            "instance_row": self.instance_row,
            "local": {
                "shap": serde_json::from_str::<serde_json::Value>(&self.shap_local.to_json()?)?,
                "cafa": self.cafa_local.to_value(),
                "pearson_controllable": {"signed": signed, "magnitude": magnitude},
            },
            "global": {
                "sample_rows": self.sample_rows,
                "shap": {
                    "features": names,
                    "mean_phi": self.shap_global.mean_phi,
                    "mean_abs_phi": self.shap_global.mean_abs_phi,
                    "n": self.shap_global.n,
                },
                "cafa": {
                    "features": names,
                    "mean_phi": self.cafa_global.mean_phi(),
                    "mean_abs_phi": self.cafa_global.mean_abs_phi(),
                    "importance": self.cafa_global.importance,
                    "n": self.cafa_global.global.n,
                    "failures": self.cafa_global.failures.iter()
                        .map(|(i, e)| json!({"sample_index": i, "row": self.sample_rows[*i], "error": e}))
                        .collect::<Vec<_>>(),
                },
            },
        });
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn run_meta_json(&self) -> Result<String, BenchError> {
        let counts = self.data.class_counts();
        let doc = json!({
            "version": env!("CARGO_PKG_VERSION"),
            "config": self.config,
            "resolved_cafa": self.resolved_cafa,
            "dataset": {
                "rows": self.data.len(),
                "features": self.data.n_features(),
                "classes": self.data.classes(),
                "class_counts": counts,
            },
            "model": {"params": self.model.params(), "test_accuracy": self.test_accuracy},
            "seeds": {
                "experiment": self.config.seed,
                "split": mix(self.config.seed, 1),
                "shap_background": mix(self.config.seed, 2),
                "sample": mix(self.config.seed, 3),
                "cafa": self.resolved_cafa.seed,
            },
        });
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn bars_svg(&self, stamp: Option<&str>) -> String {
        let names = self.data.schema().names();
        bar_chart(
            &format!("Local explanation of row {}", self.instance_row),
            &names,
            &[
                BarSeries {
                    label: "SHAP",
                    color: "#3b6fd4",
                    values: &self.shap_local.phi,
                },
                BarSeries {
                    label: "CAFA",
                    color: "#d43b3b",
                    values: &self.cafa_local.attribution.phi,
                },
                BarSeries {
                    label: "CAFA mean |phi|",
                    color: "#f0a040",
                    values: &self.cafa_local.importance,
                },
            ],
            stamp,
        )
    }

    pub fn summary_svg(&self, stamp: Option<&str>) -> String {
        let schema = self.data.schema();
        let names = schema.names();
        let points = |atts: &mut dyn Iterator<Item = (usize, &Attribution)>| {
            let mut per_feature = vec![Vec::new(); schema.len()];
            for (row, a) in atts {
                let x = self.data.row(row);
                for (j, pts) in per_feature.iter_mut().enumerate() {
                    pts.push((a.phi[j], ordinal(&schema.feature(j).kind, x[j])));
                }
            }
            per_feature
        };
        let shap = points(&mut self.sample_rows.iter().copied().zip(&self.shap_locals));
        let cafa = points(
            &mut self
                .cafa_global
                .per_instance
                .iter()
                .map(|(i, r)| (self.sample_rows[*i], &r.attribution)),
        );
        beeswarm(
            "Global explanations (colour: feature value, blue low to red high)",
            &names,
            &[
                SwarmPanel {
                    title: "SHAP",
                    points: shap,
                },
                SwarmPanel {
                    title: "CAFA",
                    points: cafa,
                },
            ],
            stamp,
        )
    }

    /// Writes attribution.csv, attribution.json, bars.svg, summary.svg and run_meta.json.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
        fs::create_dir_all(dir)?;
        let stamp = self.config.svg_timestamp.then(|| {
            let secs = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            format!("unix:{secs}")
        });
        let files: [(&str, Vec<u8>); 5] = [
            ("attribution.csv", self.attribution_csv()?),
            ("attribution.json", self.attribution_json()?.into_bytes()),
            ("bars.svg", self.bars_svg(stamp.as_deref()).into_bytes()),
            (
                "summary.svg",
                self.summary_svg(stamp.as_deref()).into_bytes(),
            ),
            ("run_meta.json", self.run_meta_json()?.into_bytes()),
        ];
        let mut written = Vec::new();
        for (name, bytes) in files {
            let path = dir.join(name);
            fs::write(&path, bytes)?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Runs a configured experiment without writing anything.
///
/// Trains `f` on a holdout split, explains one instance with standard SHAP
/// and CAFA, then explains a seeded sample with both and aggregates.
pub fn execute(config: &ExperimentConfig, base: &Path) -> Result<ExperimentReport, BenchError> {
    config.validate()?;
    let data = config.dataset.load(base)?;
    let (train, test) = data.split_holdout(config.test_fraction, mix(config.seed, 1))?;
    let model = train_forest(&train, &config.model).map_err(|source| BenchError::Model {
        stage: "training",
        source,
    })?;
    let test_accuracy = model.accuracy(&test);
    let resolved_cafa = CafaConfig {
        seed: config.cafa.seed ^ config.seed,
        ..config.cafa.clone()
    }
    .resolve(&train)
    .map_err(|source| BenchError::Cafa {
        stage: "proximity estimation",
        source,
    })?;
    let bg = Background::sample(&train, config.shap_background, mix(config.seed, 2)).map_err(
        |source| BenchError::Explain {
            stage: "background",
            source,
        },
    )?;
    let schema = data.schema();

    let instance_row = match config.instance {
        Some(i) if i >= data.len() => {
            return Err(BenchError::Config(format!(
                "instance {i} out of range for {} rows",
                data.len()
            )))
        }
        Some(i) => i,
        None => data
            .rows()
            .iter()
            .position(|r| r == test.row(0))
            .unwrap_or(0),
    };
    let x = data.row(instance_row);
    let shap_seed = mix(config.seed, 4);
    let shap_local =
        standard_shap(&model, x, &bg, shap_seed).map_err(|source| BenchError::Explain {
            stage: "local SHAP",
            source,
        })?;
    let cafa_local =
        cafa_local(x, &model, schema, &resolved_cafa).map_err(|source| BenchError::Cafa {
            stage: "local CAFA",
            source,
        })?;

    let sample_rows = data.sample_indices(config.sample_size, mix(config.seed, 3));
    let xs: Vec<Instance> = sample_rows.iter().map(|&i| data.row(i).clone()).collect();
    let shap_locals = xs
        .par_iter()
        .enumerate()
        .map(|(i, x)| standard_shap(&model, x, &bg, mix(shap_seed, i as u64)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| BenchError::Explain {
            stage: "global SHAP",
            source,
        })?;
    let shap_global = global_explanation(&shap_locals).map_err(|source| BenchError::Explain {
        stage: "global SHAP",
        source,
    })?;
    let cafa_global =
        cafa_global(&xs, &model, schema, &resolved_cafa).map_err(|source| BenchError::Cafa {
            stage: "global CAFA",
            source,
        })?;

    Ok(ExperimentReport {
        config: config.clone(),
        resolved_cafa,
        data,
        model,
        test_accuracy,
        instance_row,
        shap_local,
        cafa_local,
        sample_rows,
        shap_locals,
        shap_global,
        cafa_global,
    })
}

/// Loads `config_path`, runs it and writes the reports. The output directory
/// is `output_dir` from the config, else `out` next to the config file.
pub fn run_experiment<P: AsRef<Path>>(
    config_path: P,
) -> Result<(ExperimentReport, Vec<PathBuf>), BenchError> {
    let path = config_path.as_ref();
    let config = ExperimentConfig::from_path(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let report = execute(&config, base)?;
    let dir = match &config.output_dir {
        Some(d) => base.join(d),
        None => base.join("out"),
    };
    let files = report.write(&dir)?;
    Ok((report, files))
}
