use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use cafa::bench::{self, BenchError, ExperimentConfig, SynthSpec};
use cafa::cafa::{
    cafa_global, cafa_local, compare_with_shap, CafaConfig, CafaError, Explainer, Proximity,
    DEFAULT_CAFA_PERMUTATIONS,
};
use cafa::datasets::breast_cancer;
use cafa::explain::{
    global_explanation, lime_explain, shapley_exact, shapley_mc, Attribution, Background,
    ExplainError, DEFAULT_EXACT_LIMIT, DEFAULT_MC_PERMUTATIONS,
};
use cafa::model::{train_forest, ForestParams, ModelError, PredictFn, RandomForest};
use cafa::rng::mix;
use cafa::schema::{load_csv, Dataset, IngestSpec, Instance};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_MODEL: u8 = 4;
const EXIT_EXPLAIN: u8 = 5;

/// Feature attribution restricted to controllable features.
#[derive(Parser)]
#[command(name = "cafa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a random forest and save it as JSON.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        forest: ForestArgs,
        /// Held-out fraction used to report accuracy.
        #[arg(long, default_value_t = 0.3)]
        test_fraction: f64,
        #[arg(long, default_value = "model.json")]
        out: PathBuf,
    },
    /// Explain one instance.
    Explain {
        #[command(flatten)]
        common: ExplainArgs,
        #[arg(long, value_enum, default_value_t = MethodArg::Cafa)]
        method: MethodArg,
        /// Dataset row index, or a CSV file with a header and one raw record.
        #[arg(long)]
        instance: String,
        /// Perturbation samples for the LIME baseline.
        #[arg(long, default_value_t = 5_000)]
        lime_samples: usize,
    },
    /// Explain a seeded sample of rows and aggregate.
    Global {
        #[command(flatten)]
        common: ExplainArgs,
        #[arg(long, value_enum, default_value_t = GlobalMethod::Cafa)]
        method: GlobalMethod,
        #[arg(long, default_value_t = 100)]
        sample: usize,
    },
    /// Compare standard SHAP and CAFA on one instance.
    Compare {
        #[command(flatten)]
        common: ExplainArgs,
        #[arg(long)]
        instance: String,
    },
    /// Generate a synthetic dataset as CSV plus its ingestion spec.
    Synth {
        #[arg(long, value_enum, conflicts_with = "spec")]
        preset: Option<Preset>,
        /// Synthetic spec as JSON.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "synth.csv")]
        out: PathBuf,
    },
    /// Run an experiment described by a JSON config.
    Experiment {
        config: PathBuf,
        /// Omit the generation timestamp from SVG charts.
        #[arg(long)]
        no_timestamp: bool,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    /// CSV file (needs --spec).
    #[arg(long, requires = "spec", conflicts_with = "dataset")]
    data: Option<PathBuf>,
    /// Ingestion spec JSON for --data.
    #[arg(long, requires = "data")]
    spec: Option<PathBuf>,
    /// Built-in dataset.
    #[arg(long, value_enum)]
    dataset: Option<Builtin>,
}

#[derive(Args)]
struct ForestArgs {
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long, default_value_t = 8)]
    depth: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Saved model; trained on the data with --trees/--depth/--seed when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    forest: ForestArgs,
    /// Per-class neighborhood size.
    #[arg(long, default_value_t = 500)]
    k: usize,
    /// Proximity threshold; estimated from the data when absent.
    #[arg(long)]
    pi: Option<f64>,
    /// Permutations per row for Monte-Carlo Shapley values (CAFA surrogate and SHAP on wide data).
    #[arg(long)]
    perms: Option<usize>,
    /// Force the exact or Monte-Carlo explainer.
    #[arg(long, value_enum, default_value_t = ExplainerArg::Auto)]
    explainer: ExplainerArg,
    /// Neighborhood rows explained per CAFA run.
    #[arg(long)]
    n_locals: Option<usize>,
    /// Background rows for standard SHAP.
    #[arg(long, default_value_t = 100)]
    background: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Builtin {
    BreastCancer,
    Covid,
    Lung,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Covid,
    Lung,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum MethodArg {
    Shap,
    Lime,
    Cafa,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum GlobalMethod {
    Shap,
    Cafa,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExplainerArg {
    Auto,
    Exact,
    Mc,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn fail<E: Into<anyhow::Error>>(code: u8) -> impl FnOnce(E) -> Failure {
    move |e| Failure {
        code,
        error: e.into(),
    }
}

fn cafa_code(e: &CafaError) -> u8 {
    match e {
        CafaError::InvalidConfig(_) => EXIT_USAGE,
        CafaError::Surrogate { .. } => EXIT_MODEL,
        _ => EXIT_EXPLAIN,
    }
}

fn bench_code(e: &BenchError) -> u8 {
    match e {
        BenchError::Usage(_) | BenchError::Config(_) => EXIT_USAGE,
        BenchError::Data(_)
        | BenchError::Schema(_)
        | BenchError::Io(_)
        | BenchError::Csv(_)
        | BenchError::Json(_) => EXIT_DATA,
        BenchError::Model { .. } => EXIT_MODEL,
        BenchError::Cafa { source, .. } => cafa_code(source),
        BenchError::Explain { .. } => EXIT_EXPLAIN,
    }
}

fn cafa_failure(e: CafaError) -> Failure {
    Failure {
        code: cafa_code(&e),
        error: e.into(),
    }
}

fn load_data(args: &DataArgs) -> Result<Dataset, Failure> {
    let data = match (&args.data, &args.spec, args.dataset) {
        (Some(path), Some(spec), None) => {
            let spec = IngestSpec::from_path(spec)
                .with_context(|| format!("reading spec {}", spec.display()));
            let spec = spec.map_err(fail(EXIT_DATA))?;
            load_csv(path, &spec).with_context(|| format!("loading {}", path.display()))
        }
        (None, None, Some(Builtin::BreastCancer)) => {
            breast_cancer().context("loading breast-cancer data")
        }
        (None, None, Some(Builtin::Covid)) => bench::covid_preset(0).map_err(|e| anyhow!(e)),
        (None, None, Some(Builtin::Lung)) => bench::lung_preset(0).map_err(|e| anyhow!(e)),
        _ => {
            return Err(Failure {
                code: EXIT_USAGE,
                error: anyhow!("pass either --data <csv> --spec <json> or --dataset <name>"),
            })
        }
    };
    data.map_err(fail(EXIT_DATA))
}

fn forest_params(args: &ForestArgs) -> ForestParams {
    ForestParams {
        n_trees: args.trees,
        max_depth: args.depth,
        seed: args.seed,
        ..ForestParams::default()
    }
}

fn model_error(e: ModelError) -> Failure {
    Failure {
        code: EXIT_MODEL,
        error: e.into(),
    }
}

fn obtain_model(args: &ExplainArgs, data: &Dataset) -> Result<RandomForest, Failure> {
    match &args.model {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading model {}", path.display()))
                .map_err(fail(EXIT_DATA))?;
            let model = RandomForest::from_json(&text).map_err(model_error)?;
            if model.schema() != data.schema() {
                return Err(Failure {
                    code: EXIT_MODEL,
                    error: anyhow!("model schema does not match the data"),
                });
            }
            Ok(model)
        }
        None => train_forest(data, &forest_params(&args.forest)).map_err(model_error),
    }
}

fn cafa_config(args: &ExplainArgs, data: &Dataset) -> Result<CafaConfig, Failure> {
    let perms = args.perms.unwrap_or(DEFAULT_CAFA_PERMUTATIONS);
    let mut cfg = CafaConfig {
        k: args.k,
        explainer: match args.explainer {
            ExplainerArg::Auto => Explainer::Auto.resolve(data.n_features(), perms),
            ExplainerArg::Exact => Explainer::Exact,
            ExplainerArg::Mc => Explainer::Mc { n_perms: perms },
        },
        n_locals: args.n_locals,
        seed: args.forest.seed,
        ..CafaConfig::default()
    };
    if let Some(pi) = args.pi {
        cfg.proximity = Proximity::Fixed { pi };
    }
    cfg.resolve(data).map_err(cafa_failure)
}

fn shap(
    args: &ExplainArgs,
    model: &RandomForest,
    x: &Instance,
    bg: &Background,
    seed: u64,
) -> Result<Attribution, ExplainError> {
    let perms = args.perms.unwrap_or(DEFAULT_MC_PERMUTATIONS);
    match args.explainer {
        ExplainerArg::Exact => shapley_exact(model, x, bg),
        ExplainerArg::Mc => shapley_mc(model, x, bg, perms, seed),
        ExplainerArg::Auto if x.len() > DEFAULT_EXACT_LIMIT => {
            shapley_mc(model, x, bg, perms, seed)
        }
        ExplainerArg::Auto => shapley_exact(model, x, bg),
    }
}

fn shap_background(args: &ExplainArgs, data: &Dataset) -> Result<Background, Failure> {
    Background::sample(data, args.background, mix(args.forest.seed, 2)).map_err(fail(EXIT_EXPLAIN))
}

fn resolve_instance(spec: &str, data: &Dataset) -> Result<Instance, Failure> {
    if let Ok(row) = spec.parse::<usize>() {
        return data.rows().get(row).cloned().ok_or_else(|| Failure {
            code: EXIT_USAGE,
            error: anyhow!("row {row} out of range for {} rows", data.len()),
        });
    }
    let read = || -> anyhow::Result<Instance> {
        let mut rdr = csv::Reader::from_path(spec)
            .with_context(|| format!("opening instance file {spec}"))?;
        let header = rdr.headers()?.clone();
        let record = rdr
            .records()
            .next()
            .ok_or_else(|| anyhow!("instance file {spec} has no data row"))??;
        let names = data.schema().names();
        let cells = names
            .iter()
            .map(|name| {
                header
                    .iter()
                    .position(|h| h.trim() == name)
                    .and_then(|i| record.get(i))
                    .ok_or_else(|| anyhow!("instance file lacks column `{name}`"))
            })
            .collect::<anyhow::Result<Vec<&str>>>()?;
        Ok(data.encode_raw(&cells)?)
    };
    read().map_err(fail(EXIT_DATA))
}

fn write_outputs(dir: &Path, files: &[(&str, Vec<u8>)]) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(fail(EXIT_DATA))?;
    for (name, bytes) in files {
        let path = dir.join(name);
        fs::write(&path, bytes)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(fail(EXIT_DATA))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn attribution_files(
    a: &Attribution,
    json: String,
) -> Result<Vec<(&'static str, Vec<u8>)>, Failure> {
    let mut csv = Vec::new();
    a.write_csv(&mut csv).map_err(fail(EXIT_EXPLAIN))?;
    Ok(vec![
        ("attribution.csv", csv),
        ("attribution.json", json.into_bytes()),
    ])
}

fn print_ranking(names: &[String], scores: &[f64], order: &[usize]) {
    for &j in order.iter().take(10) {
        println!("  {:<24} {:+.6}", names[j], scores[j]);
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train {
            data,
            forest,
            test_fraction,
            out,
        } => {
            let data = load_data(&data)?;
            let params = forest_params(&forest);
            let (train, test) = data
                .split_holdout(test_fraction, mix(forest.seed, 1))
                .map_err(fail(EXIT_USAGE))?;
            let holdout = train_forest(&train, &params).map_err(model_error)?;
            println!(
                "holdout accuracy {:.4} on {} rows",
                holdout.accuracy(&test),
                test.len()
            );
            let model = train_forest(&data, &params).map_err(model_error)?;
            let json = model.to_json().map_err(model_error)?;
            fs::write(&out, json)
                .with_context(|| format!("writing {}", out.display()))
                .map_err(fail(EXIT_DATA))?;
            println!("wrote {}", out.display());
        }
        Command::Explain {
            common,
            method,
            instance,
            lime_samples,
        } => {
            let data = load_data(&common.data)?;
            let model = obtain_model(&common, &data)?;
            let x = resolve_instance(&instance, &data)?;
            let seed = common.forest.seed;
            let (attribution, json) = match method {
                MethodArg::Shap => {
                    let bg = shap_background(&common, &data)?;
                    let a =
                        shap(&common, &model, &x, &bg, mix(seed, 4)).map_err(fail(EXIT_EXPLAIN))?;
                    let json = a.to_json().map_err(fail(EXIT_EXPLAIN))?;
                    (a, json)
                }
                MethodArg::Lime => {
                    let a = lime_explain(&model, &x, data.schema(), lime_samples, mix(seed, 5))
                        .map_err(fail(EXIT_EXPLAIN))?;
                    let json = a.to_json().map_err(fail(EXIT_EXPLAIN))?;
                    (a, json)
                }
                MethodArg::Cafa => {
                    let cfg = cafa_config(&common, &data)?;
                    let r = cafa_local(&x, &model, data.schema(), &cfg).map_err(cafa_failure)?;
                    let json = r.to_json().map_err(cafa_failure)?;
                    (r.attribution, json)
                }
            };
            println!(
                "{} attribution (phi0 {:.6}):",
                attribution.method.as_str(),
                attribution.phi0
            );
            print_ranking(
                &attribution.feature_names,
                &attribution.phi,
                &attribution.ranking(),
            );
            write_outputs(&common.out, &attribution_files(&attribution, json)?)?;
        }
        Command::Global {
            common,
            method,
            sample,
        } => {
            let data = load_data(&common.data)?;
            let model = obtain_model(&common, &data)?;
            let rows = data.sample_indices(sample, mix(common.forest.seed, 3));
            let xs: Vec<Instance> = rows.iter().map(|&i| data.row(i).clone()).collect();
            let (global, extra) = match method {
                GlobalMethod::Shap => {
                    let bg = shap_background(&common, &data)?;
                    let seed = mix(common.forest.seed, 4);
                    let locals = xs
                        .par_iter()
                        .enumerate()
                        .map(|(i, x)| shap(&common, &model, x, &bg, mix(seed, i as u64)))
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(fail(EXIT_EXPLAIN))?;
                    (
                        global_explanation(&locals).map_err(fail(EXIT_EXPLAIN))?,
                        json!({}),
                    )
                }
                GlobalMethod::Cafa => {
                    let cfg = cafa_config(&common, &data)?;
                    let g = cafa_global(&xs, &model, data.schema(), &cfg).map_err(cafa_failure)?;
                    for (i, e) in &g.failures {
                        eprintln!("row {} skipped: {e}", rows[*i]);
                    }
                    let extra = json!({
                        "importance": g.importance,
                        "failures": g.failures.iter().map(|(i, e)| json!({"row": rows[*i], "error": e})).collect::<Vec<_>>(),
                        "pi": cfg.pi(),
                        "k": cfg.k,
                    });
                    (g.global, extra)
                }
            };
            println!(
                "global {} over {} rows (by mean |phi|):",
                method_name(method),
                global.n
            );
            print_ranking(
                &global.feature_names,
                &global.mean_abs_phi,
                &global.ranking(),
            );
            let mut csv = Vec::new();
            global.write_csv(&mut csv).map_err(fail(EXIT_EXPLAIN))?;
            let doc = json!({
                "method": method_name(method),
                "rows": rows,
                "features": global.feature_names,
                "mean_phi": global.mean_phi,
                "mean_abs_phi": global.mean_abs_phi,
                "mean_phi0": global.mean_phi0,
                "n": global.n,
                "seed": common.forest.seed,
                "details": extra,
            });
            let json = serde_json::to_string_pretty(&doc).map_err(fail(EXIT_EXPLAIN))?;
            write_outputs(
                &common.out,
                &[
                    ("attribution.csv", csv),
                    ("attribution.json", json.into_bytes()),
                ],
            )?;
        }
        Command::Compare { common, instance } => {
            let data = load_data(&common.data)?;
            let model = obtain_model(&common, &data)?;
            let x = resolve_instance(&instance, &data)?;
            let cfg = cafa_config(&common, &data)?;
            let bg = shap_background(&common, &data)?;
            let c =
                compare_with_shap(&x, &model, data.schema(), &cfg, &bg).map_err(cafa_failure)?;
            println!(
                "pearson over controllable features: signed {:.4}, magnitude {:.4}",
                c.pearson_signed, c.pearson_magnitude
            );
            let schema = data.schema();
            let mut w = csv::Writer::from_writer(Vec::new());
            let rows = (0..schema.len()).map(|j| {
                let f = schema.feature(j);
                [
                    f.name.clone(),
                    f.controllable.to_string(),
                    c.shap.phi[j].to_string(),
                    c.cafa.attribution.phi[j].to_string(),
                    c.cafa.importance[j].to_string(),
                ]
            });
            let write = || -> Result<Vec<u8>, anyhow::Error> {
                w.write_record(["feature", "controllable", "shap", "cafa", "cafa_mean_abs"])?;
                for r in rows {
                    w.write_record(&r)?;
                }
                Ok(w.into_inner().map_err(|e| e.into_error())?)
            };
            let csv = write().map_err(fail(EXIT_EXPLAIN))?;
            let doc = json!({
                "shap": serde_json::from_str::<serde_json::Value>(&c.shap.to_json().map_err(fail(EXIT_EXPLAIN))?)
                    .map_err(fail(EXIT_EXPLAIN))?,
                "cafa": c.cafa.to_value(),
                "pearson_controllable": {"signed": c.pearson_signed, "magnitude": c.pearson_magnitude},
            });
            let json = serde_json::to_string_pretty(&doc).map_err(fail(EXIT_EXPLAIN))?;
            write_outputs(
                &common.out,
                &[
                    ("attribution.csv", csv),
                    ("attribution.json", json.into_bytes()),
                ],
            )?;
        }
        Command::Synth {
            preset,
            spec,
            seed,
            out,
        } => {
            let spec = match (preset, spec) {
                (Some(Preset::Covid), None) => bench::covid_preset_spec(seed),
                (Some(Preset::Lung), None) => bench::lung_preset_spec(seed),
                (None, Some(path)) => {
                    let text = fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))
                        .map_err(fail(EXIT_DATA))?;
                    let mut spec: SynthSpec = serde_json::from_str(&text)
                        .with_context(|| format!("parsing {}", path.display()))
                        .map_err(fail(EXIT_USAGE))?;
                    spec.seed = seed;
                    spec
                }
                _ => {
                    return Err(Failure {
                        code: EXIT_USAGE,
                        error: anyhow!("pass --preset or --spec"),
                    })
                }
            };
            let data = bench::generate_synth(&spec).map_err(|e| Failure {
                code: bench_code(&e),
                error: e.into(),
            })?;
            let mut csv = Vec::new();
            data.write_raw_csv(&mut csv, "label")
                .map_err(fail(EXIT_DATA))?;
            let spec_path = out.with_extension("spec.json");
            let ingest = IngestSpec::for_dataset(&data, "label").to_json();
            let dir = out
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .unwrap_or(Path::new("."));
            let name = |p: &Path| {
                p.file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default()
            };
            let files = [(name(&out), csv), (name(&spec_path), ingest.into_bytes())];
            let refs: Vec<(&str, Vec<u8>)> =
                files.iter().map(|(n, b)| (n.as_str(), b.clone())).collect();
            write_outputs(dir, &refs)?;
            println!(
                "{} rows, {} features, classes {:?}",
                data.len(),
                data.n_features(),
                data.class_counts()
            );
        }
        Command::Experiment {
            config,
            no_timestamp,
            out,
        } => {
            let to_failure = |e: BenchError| Failure {
                code: bench_code(&e),
                error: e.into(),
            };
            let mut cfg = ExperimentConfig::from_path(&config).map_err(to_failure)?;
            if no_timestamp {
                cfg.svg_timestamp = false;
            }
            let base = config.parent().unwrap_or(Path::new("."));
            let report = bench::execute(&cfg, base).map_err(to_failure)?;
            let dir = match (&out, &cfg.output_dir) {
                (Some(d), _) => d.clone(),
                (None, Some(d)) => base.join(d),
                (None, None) => base.join("out"),
            };
            let files = report.write(&dir).map_err(to_failure)?;
            println!(
                "test accuracy {:.4}; {} CAFA failures out of {}",
                report.test_accuracy,
                report.cafa_global.failures.len(),
                report.sample_rows.len()
            );
            for f in files {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn method_name(m: GlobalMethod) -> &'static str {
    match m {
        GlobalMethod::Shap => "shap",
        GlobalMethod::Cafa => "cafa",
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
