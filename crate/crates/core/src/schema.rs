//! Feature metadata, datasets and CSV ingestion.
//!
//! Every instance handled by the crate is a fixed-length vector of
//! [`FeatureValue`]s that matches a [`FeatureSchema`]. Continuous columns are
//! min-max scaled into `[0, 1]` at ingestion time and categorical columns are
//! mapped to indices into their vocabulary.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::ops::Deref;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tokens treated as missing cells when the ingestion spec does not override them.
pub const DEFAULT_MISSING_TOKENS: &[&str] = &["?", ""];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("schema has no features")]
    NoFeatures,
    #[error("duplicate feature name `{0}`")]
    DuplicateName(String),
    #[error("feature `{0}` has an empty vocabulary")]
    EmptyVocabulary(String),
    #[error("feature `{feature}` lists category `{category}` twice")]
    DuplicateCategory { feature: String, category: String },
    #[error("feature `{feature}` has invalid weight {weight}")]
    InvalidWeight { feature: String, weight: f64 },
    #[error("feature weights sum to zero")]
    ZeroWeights,
    #[error("instance has {actual} values but the schema has {expected} features")]
    Arity { expected: usize, actual: usize },
    #[error("feature `{feature}`: {reason}")]
    ValueMismatch { feature: String, reason: String },
    #[error("invalid normalization range: min {min} must be below max {max}")]
    InvalidRange { min: f64, max: f64 },
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid ingestion spec: {0}")]
    Spec(#[from] serde_json::Error),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("line {line}: unknown category `{value}` for feature `{feature}`")]
    UnknownCategory {
        line: usize,
        feature: String,
        value: String,
    },
    #[error("continuous column `{0}` is constant or empty")]
    ConstantColumn(String),
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("dataset has no rows")]
    Empty,
    #[error("{rows} rows but {labels} labels")]
    LabelCount { rows: usize, labels: usize },
    #[error("label id {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{0}")]
    Invalid(String),
}

/// Per-feature value domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureKind {
    Categorical { vocabulary: Vec<String> },
    Continuous,
}

impl FeatureKind {
    pub fn is_categorical(&self) -> bool {
        matches!(self, FeatureKind::Categorical { .. })
    }

    pub fn n_categories(&self) -> Option<usize> {
        match self {
            FeatureKind::Categorical { vocabulary } => Some(vocabulary.len()),
            FeatureKind::Continuous => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
    pub controllable: bool,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl Feature {
    pub fn categorical<S: Into<String>>(
        name: S,
        vocabulary: Vec<String>,
        controllable: bool,
    ) -> Self {
        Feature {
            name: name.into(),
            kind: FeatureKind::Categorical { vocabulary },
            controllable,
            weight: 1.0,
        }
    }

    /// Categorical feature whose vocabulary is `"0".."n-1"`.
    pub fn coded<S: Into<String>>(name: S, n: usize, controllable: bool) -> Self {
        Self::categorical(name, (0..n).map(|c| c.to_string()).collect(), controllable)
    }

    pub fn continuous<S: Into<String>>(name: S, controllable: bool) -> Self {
        Feature {
            name: name.into(),
            kind: FeatureKind::Continuous,
            controllable,
            weight: 1.0,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }
}

/// Ordered feature list with controllability flags and distance weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema", into = "RawSchema")]
pub struct FeatureSchema {
    features: Vec<Feature>,
}

#[derive(Serialize, Deserialize)]
struct RawSchema {
    features: Vec<Feature>,
}

impl TryFrom<RawSchema> for FeatureSchema {
    type Error = SchemaError;

    fn try_from(raw: RawSchema) -> Result<Self, SchemaError> {
        FeatureSchema::new(raw.features)
    }
}

impl From<FeatureSchema> for RawSchema {
    fn from(schema: FeatureSchema) -> Self {
        RawSchema {
            features: schema.features,
        }
    }
}

impl FeatureSchema {
    pub fn new(features: Vec<Feature>) -> Result<Self, SchemaError> {
        if features.is_empty() {
            return Err(SchemaError::NoFeatures);
        }
        let mut names = HashSet::new();
        let mut total = 0.0;
        for f in &features {
            if !names.insert(f.name.as_str()) {
                return Err(SchemaError::DuplicateName(f.name.clone()));
            }
            if let FeatureKind::Categorical { vocabulary } = &f.kind {
                if vocabulary.is_empty() {
                    return Err(SchemaError::EmptyVocabulary(f.name.clone()));
                }
                let mut seen = HashSet::new();
                for c in vocabulary {
                    if !seen.insert(c.as_str()) {
                        return Err(SchemaError::DuplicateCategory {
                            feature: f.name.clone(),
                            category: c.clone(),
                        });
                    }
                }
            }
            if !(f.weight.is_finite() && f.weight >= 0.0) {
                return Err(SchemaError::InvalidWeight {
                    feature: f.name.clone(),
                    weight: f.weight,
                });
            }
            total += f.weight;
        }
        if total <= 0.0 {
            return Err(SchemaError::ZeroWeights);
        }
        let schema = FeatureSchema { features };
        debug_assert_eq!(
            schema.controllable().len() + schema.uncontrollable().len(),
            schema.len()
        );
        Ok(schema)
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn feature(&self, index: usize) -> &Feature {
        &self.features[index]
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn weights(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.weight).collect()
    }

    /// Indices of controllable features (F_c), ascending.
    pub fn controllable(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.features[i].controllable)
            .collect()
    }

    /// Indices of uncontrollable features (F_u), ascending.
    pub fn uncontrollable(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| !self.features[i].controllable)
            .collect()
    }

    /// Returns a copy of the schema with every controllability flag replaced.
    pub fn with_controllable(&self, flags: &[bool]) -> Result<Self, SchemaError> {
        if flags.len() != self.len() {
            return Err(SchemaError::Arity {
                expected: self.len(),
                actual: flags.len(),
            });
        }
        let features = self
            .features
            .iter()
            .zip(flags)
            .map(|(f, &c)| Feature {
                controllable: c,
                ..f.clone()
            })
            .collect();
        FeatureSchema::new(features)
    }

    /// Checks arity and per-feature kinds of a value vector.
    pub fn check(&self, values: &[FeatureValue]) -> Result<(), SchemaError> {
        if values.len() != self.len() {
            return Err(SchemaError::Arity {
                expected: self.len(),
                actual: values.len(),
            });
        }
        for (f, v) in self.features.iter().zip(values) {
            let problem = match (&f.kind, v) {
                (FeatureKind::Categorical { vocabulary }, FeatureValue::Category(c)) => {
                    ((*c as usize) >= vocabulary.len()).then(|| {
                        format!(
                            "category code {c} outside vocabulary of size {}",
                            vocabulary.len()
                        )
                    })
                }
                (FeatureKind::Continuous, FeatureValue::Real(r)) => (!(0.0..=1.0).contains(r))
                    .then(|| format!("continuous value {r} outside [0, 1]")),
                (FeatureKind::Categorical { .. }, FeatureValue::Real(_)) => {
                    Some("expected a category code, got a real value".to_string())
                }
                (FeatureKind::Continuous, FeatureValue::Category(_)) => {
                    Some("expected a real value, got a category code".to_string())
                }
            };
            if let Some(reason) = problem {
                return Err(SchemaError::ValueMismatch {
                    feature: f.name.clone(),
                    reason,
                });
            }
        }
        Ok(())
    }

    /// Human-readable rendering of one value.
    pub fn display_value(&self, index: usize, value: FeatureValue) -> String {
        match (&self.features[index].kind, value) {
            (FeatureKind::Categorical { vocabulary }, FeatureValue::Category(c)) => vocabulary
                .get(c as usize)
                .cloned()
                .unwrap_or_else(|| format!("#{c}")),
            (_, FeatureValue::Real(r)) => format!("{r}"),
            (_, FeatureValue::Category(c)) => format!("#{c}"),
        }
    }
}

/// One cell of an instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FeatureValue {
    Category(u32),
    Real(f64),
}

impl FeatureValue {
    /// Numeric view used by linear surrogates and label rules.
    pub fn as_f64(self) -> f64 {
        match self {
            FeatureValue::Category(c) => c as f64,
            FeatureValue::Real(r) => r,
        }
    }

    pub(crate) fn bits(self) -> u64 {
        match self {
            FeatureValue::Category(c) => crate::rng::mix(0xca7, c as u64),
            FeatureValue::Real(r) => crate::rng::mix(0x4ea1, r.to_bits()),
        }
    }
}

/// Fixed-length value vector matching a schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Instance(Vec<FeatureValue>);

impl Instance {
    pub fn new(values: Vec<FeatureValue>) -> Self {
        Instance(values)
    }

    /// Builds an instance and validates it against `schema`.
    pub fn checked(values: Vec<FeatureValue>, schema: &FeatureSchema) -> Result<Self, SchemaError> {
        schema.check(&values)?;
        Ok(Instance(values))
    }

    pub fn values(&self) -> &[FeatureValue] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [FeatureValue] {
        &mut self.0
    }

    pub fn into_values(self) -> Vec<FeatureValue> {
        self.0
    }
}

impl Deref for Instance {
    type Target = [FeatureValue];

    fn deref(&self) -> &[FeatureValue] {
        &self.0
    }
}

impl From<Vec<FeatureValue>> for Instance {
    fn from(values: Vec<FeatureValue>) -> Self {
        Instance(values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub min: f64,
    pub max: f64,
}

impl NormParams {
    pub fn new(min: f64, max: f64) -> Result<Self, SchemaError> {
        if !(min < max) || !min.is_finite() || !max.is_finite() {
            return Err(SchemaError::InvalidRange { min, max });
        }
        Ok(NormParams { min, max })
    }

    pub fn normalize(&self, value: f64) -> f64 {
        ((value - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }

    pub fn denormalize(&self, scaled: f64) -> f64 {
        self.min + scaled * (self.max - self.min)
    }
}

/// Min-max scales `value` into `[0, 1]`, clamping values outside `[min, max]`.
pub fn normalize(value: f64, min: f64, max: f64) -> Result<f64, SchemaError> {
    Ok(NormParams::new(min, max)?.normalize(value))
}

pub fn denormalize(scaled: f64, min: f64, max: f64) -> Result<f64, SchemaError> {
    Ok(NormParams::new(min, max)?.denormalize(scaled))
}

/// Normalized tabular rows with class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    schema: FeatureSchema,
    rows: Vec<Instance>,
    labels: Vec<usize>,
    classes: Vec<String>,
    norm: Vec<Option<NormParams>>,
}

impl Dataset {
    /// Validates rows against the schema. Continuous columns get the identity
    /// normalization `[0, 1]` until [`Dataset::with_norm`] says otherwise.
    pub fn new(
        schema: FeatureSchema,
        rows: Vec<Instance>,
        labels: Vec<usize>,
        classes: Vec<String>,
    ) -> Result<Self, DataError> {
        if rows.is_empty() {
            return Err(DataError::Empty);
        }
        if rows.len() != labels.len() {
            return Err(DataError::LabelCount {
                rows: rows.len(),
                labels: labels.len(),
            });
        }
        for row in &rows {
            schema.check(row)?;
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes.len()) {
            return Err(DataError::LabelOutOfRange {
                label,
                classes: classes.len(),
            });
        }
        let norm = schema
            .features()
            .iter()
            .map(|f| match f.kind {
                FeatureKind::Continuous => Some(NormParams { min: 0.0, max: 1.0 }),
                FeatureKind::Categorical { .. } => None,
            })
            .collect();
        Ok(Dataset {
            schema,
            rows,
            labels,
            classes,
            norm,
        })
    }

    pub fn with_norm(mut self, norm: Vec<Option<NormParams>>) -> Result<Self, DataError> {
        if norm.len() != self.schema.len() {
            return Err(DataError::Invalid(format!(
                "{} normalization entries for {} features",
                norm.len(),
                self.schema.len()
            )));
        }
        for (f, n) in self.schema.features().iter().zip(&norm) {
            match (&f.kind, n) {
                (FeatureKind::Continuous, Some(p)) => {
                    NormParams::new(p.min, p.max)?;
                }
                (FeatureKind::Categorical { .. }, None) => {}
                _ => {
                    return Err(DataError::Invalid(format!(
                        "normalization entry for `{}` does not match its kind",
                        f.name
                    )))
                }
            }
        }
        self.norm = norm;
        Ok(self)
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[Instance] {
        &self.rows
    }

    pub fn row(&self, index: usize) -> &Instance {
        &self.rows[index]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn norm_params(&self) -> &[Option<NormParams>] {
        &self.norm
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    /// Number of distinct labels actually present.
    pub fn distinct_labels(&self) -> usize {
        self.labels.iter().collect::<BTreeSet<_>>().len()
    }

    /// Label histogram indexed by class id.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset, DataError> {
        let rows = indices.iter().map(|&i| self.rows[i].clone()).collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(self.schema.clone(), rows, labels, self.classes.clone())?
            .with_norm(self.norm.clone())
    }

    /// Same rows under a different schema (e.g. changed controllability flags).
    pub fn with_schema(&self, schema: FeatureSchema) -> Result<Dataset, DataError> {
        Dataset::new(
            schema,
            self.rows.clone(),
            self.labels.clone(),
            self.classes.clone(),
        )?
        .with_norm(self.norm.clone())
    }

    /// Seeded shuffle split; the second part holds `round(test_fraction * n)` rows.
    pub fn split_holdout(
        &self,
        test_fraction: f64,
        seed: u64,
    ) -> Result<(Dataset, Dataset), DataError> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(DataError::Invalid(format!(
                "test fraction {test_fraction} outside [0, 1)"
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = (test_fraction * self.len() as f64).round() as usize;
        let (test, train) = order.split_at(n_test);
        Ok((self.subset(train)?, self.subset(test)?))
    }

    /// `n` distinct row indices drawn without replacement (all rows if `n >= len`).
    pub fn sample_indices(&self, n: usize, seed: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if n >= self.len() {
            return (0..self.len()).collect();
        }
        rand::seq::index::sample(&mut rng, self.len(), n).into_vec()
    }

    /// Writes the normalized dataset as CSV: one column per feature plus the label.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.schema.names();
        header.push("label".to_string());
        w.write_record(&header)?;
        for (row, &label) in self.rows.iter().zip(&self.labels) {
            let mut record: Vec<String> = (0..row.len())
                .map(|j| self.schema.display_value(j, row[j]))
                .collect();
            record.push(self.classes[label].clone());
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes rows in the raw (denormalized) units with the label under `label_column`,
    /// so the output can be re-ingested with a matching [`IngestSpec`].
    pub fn write_raw_csv<W: Write>(&self, writer: W, label_column: &str) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.schema.names();
        header.push(label_column.to_string());
        w.write_record(&header)?;
        for (row, &label) in self.rows.iter().zip(&self.labels) {
            let mut record: Vec<String> = Vec::with_capacity(row.len() + 1);
            for (j, v) in row.iter().enumerate() {
                record.push(match (v, self.norm[j]) {
                    (FeatureValue::Real(r), Some(p)) => format!("{}", p.denormalize(*r)),
                    _ => self.schema.display_value(j, *v),
                });
            }
            record.push(self.classes[label].clone());
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Encodes one raw record (cells in schema order) with this dataset's
    /// vocabularies and normalization. Out-of-range reals are clamped.
    pub fn encode_raw(&self, cells: &[&str]) -> Result<Instance, DataError> {
        if cells.len() != self.schema.len() {
            return Err(DataError::MalformedRow {
                line: 1,
                reason: format!(
                    "expected {} cells, found {}",
                    self.schema.len(),
                    cells.len()
                ),
            });
        }
        let mut values = Vec::with_capacity(cells.len());
        for (j, cell) in cells.iter().enumerate() {
            let cell = cell.trim();
            let f = self.schema.feature(j);
            values.push(match &f.kind {
                FeatureKind::Categorical { vocabulary } => {
                    let code = vocabulary.iter().position(|c| c == cell).ok_or_else(|| {
                        DataError::UnknownCategory {
                            line: 1,
                            feature: f.name.clone(),
                            value: cell.to_string(),
                        }
                    })?;
                    FeatureValue::Category(code as u32)
                }
                FeatureKind::Continuous => {
                    let raw: f64 = cell.parse().map_err(|_| DataError::MalformedRow {
                        line: 1,
                        reason: format!("cannot parse `{cell}` as a number for `{}`", f.name),
                    })?;
                    let p = self.norm[j].unwrap_or(NormParams { min: 0.0, max: 1.0 });
                    FeatureValue::Real(p.normalize(raw))
                }
            });
        }
        Ok(Instance(values))
    }
}

/// Column type in an ingestion spec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    #[serde(rename = "cat")]
    Categorical,
    #[serde(rename = "cont")]
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub controllable: bool,
    #[serde(default = "unit_weight")]
    pub weight: f64,
    /// Closed vocabulary; categories outside it are rejected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<Vec<String>>,
}

/// Ingestion config: `{ label, features: [{name, kind: "cat"|"cont", controllable, weight}] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSpec {
    pub label: String,
    pub features: Vec<ColumnSpec>,
    /// Closed, ordered list of class labels; class ids follow this order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing: Option<Vec<String>>,
}

impl IngestSpec {
    pub fn from_json(text: &str) -> Result<Self, DataError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Spec that re-ingests the output of [`Dataset::write_raw_csv`], with
    /// closed vocabularies and classes.
    pub fn for_dataset(data: &Dataset, label: &str) -> Self {
        IngestSpec {
            label: label.to_string(),
            features: data
                .schema()
                .features()
                .iter()
                .map(|f| ColumnSpec {
                    name: f.name.clone(),
                    kind: match f.kind {
                        FeatureKind::Categorical { .. } => ColumnKind::Categorical,
                        FeatureKind::Continuous => ColumnKind::Continuous,
                    },
                    controllable: f.controllable,
                    weight: f.weight,
                    vocabulary: match &f.kind {
                        FeatureKind::Categorical { vocabulary } => Some(vocabulary.clone()),
                        FeatureKind::Continuous => None,
                    },
                })
                .collect(),
            classes: Some(data.classes().to_vec()),
            missing: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    fn is_missing(&self, cell: &str) -> bool {
        match &self.missing {
            Some(tokens) => tokens.iter().any(|t| t == cell),
            None => DEFAULT_MISSING_TOKENS.contains(&cell),
        }
    }
}

/// Reads a CSV file with a header row and encodes it per `spec`.
pub fn load_csv<P: AsRef<Path>>(path: P, spec: &IngestSpec) -> Result<Dataset, DataError> {
    load_csv_from_reader(File::open(path)?, spec)
}

pub fn load_csv_from_reader<R: Read>(reader: R, spec: &IngestSpec) -> Result<Dataset, DataError> {
    if spec.features.is_empty() {
        return Err(SchemaError::NoFeatures.into());
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let label_col = column(&spec.label)?;
    let feature_cols = spec
        .features
        .iter()
        .map(|c| column(&c.name))
        .collect::<Result<Vec<_>, _>>()?;

    let mut cells: Vec<Vec<Option<String>>> = vec![Vec::new(); spec.features.len()];
    let mut raw_labels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record?;
        if record.len() != header.len() {
            return Err(DataError::MalformedRow {
                line,
                reason: format!("expected {} cells, found {}", header.len(), record.len()),
            });
        }
        let label = &record[label_col];
        if spec.is_missing(label) {
            return Err(DataError::MalformedRow {
                line,
                reason: "missing label".to_string(),
            });
        }
        raw_labels.push((line, label.to_string()));
        for (k, &col) in feature_cols.iter().enumerate() {
            let cell = &record[col];
            cells[k].push((!spec.is_missing(cell)).then(|| cell.to_string()));
        }
    }
    if raw_labels.is_empty() {
        return Err(DataError::Empty);
    }
    let n = raw_labels.len();

    let mut features = Vec::with_capacity(spec.features.len());
    let mut norm = Vec::with_capacity(spec.features.len());
    let mut columns: Vec<Vec<FeatureValue>> = Vec::with_capacity(spec.features.len());
    for (col, cells) in spec.features.iter().zip(&cells) {
        match col.kind {
            ColumnKind::Continuous => {
                let mut parsed = Vec::with_capacity(n);
                for (i, cell) in cells.iter().enumerate() {
                    parsed.push(match cell {
                        Some(s) => {
                            Some(s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(
                                || DataError::MalformedRow {
                                    line: i + 2,
                                    reason: format!(
                                        "cannot parse `{s}` as a number for `{}`",
                                        col.name
                                    ),
                                },
                            )?)
                        }
                        None => None,
                    });
                }
                let mut present: Vec<f64> = parsed.iter().flatten().copied().collect();
                if present.is_empty() {
                    return Err(DataError::ConstantColumn(col.name.clone()));
                }
                present.sort_by(f64::total_cmp);
                let median = {
                    let mid = present.len() / 2;
                    if present.len() % 2 == 0 {
                        0.5 * (present[mid - 1] + present[mid])
                    } else {
                        present[mid]
                    }
                };
                let (min, max) = (present[0], present[present.len() - 1]);
                let params = NormParams::new(min, max)
                    .map_err(|_| DataError::ConstantColumn(col.name.clone()))?;
                columns.push(
                    parsed
                        .iter()
                        .map(|v| FeatureValue::Real(params.normalize(v.unwrap_or(median))))
                        .collect(),
                );
                norm.push(Some(params));
                features.push(
                    Feature::continuous(col.name.clone(), col.controllable).with_weight(col.weight),
                );
            }
            ColumnKind::Categorical => {
                let vocabulary: Vec<String> = match &col.vocabulary {
                    Some(v) => v.clone(),
                    None => cells
                        .iter()
                        .flatten()
                        .cloned()
                        .collect::<BTreeSet<_>>()
                        .into_iter()
                        .collect(),
                };
                let mut codes = Vec::with_capacity(n);
                for (i, cell) in cells.iter().enumerate() {
                    codes.push(match cell {
                        Some(s) => Some(vocabulary.iter().position(|c| c == s).ok_or_else(|| {
                            DataError::UnknownCategory {
                                line: i + 2,
                                feature: col.name.clone(),
                                value: s.clone(),
                            }
                        })? as u32),
                        None => None,
                    });
                }
                let mode = mode_code(codes.iter().flatten().copied()).unwrap_or(0);
                columns.push(
                    codes
                        .iter()
                        .map(|c| FeatureValue::Category(c.unwrap_or(mode)))
                        .collect(),
                );
                norm.push(None);
                features.push(
                    Feature::categorical(col.name.clone(), vocabulary, col.controllable)
                        .with_weight(col.weight),
                );
            }
        }
    }
    let schema = FeatureSchema::new(features)?;

    let classes: Vec<String> = match &spec.classes {
        Some(c) => c.clone(),
        None => raw_labels
            .iter()
            .map(|(_, l)| l.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let mut labels = Vec::with_capacity(n);
    for (line, l) in &raw_labels {
        labels.push(classes.iter().position(|c| c == l).ok_or_else(|| {
            DataError::UnknownCategory {
                line: *line,
                feature: spec.label.clone(),
                value: l.clone(),
            }
        })?);
    }
    let rows = (0..n)
        .map(|i| Instance(columns.iter().map(|c| c[i]).collect()))
        .collect();
    Dataset::new(schema, rows, labels, classes)?.with_norm(norm)
}

/// Most frequent code; ties go to the lowest code.
fn mode_code<I: Iterator<Item = u32>>(codes: I) -> Option<u32> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for c in codes {
        *counts.entry(c).or_default() += 1;
    }
    counts
        .into_iter()
        .fold(None, |best: Option<(u32, usize)>, (c, n)| match best {
            Some((_, bn)) if bn >= n => best,
            _ => Some((c, n)),
        })
        .map(|(c, _)| c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(json: &str) -> IngestSpec {
        IngestSpec::from_json(json).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(5.0, 0.0, 10.0).unwrap(), 0.5);
        assert_eq!(normalize(0.0, 0.0, 10.0).unwrap(), 0.0);
        assert_eq!(normalize(12.0, 0.0, 10.0).unwrap(), 1.0);
        assert_eq!(normalize(-3.0, 0.0, 10.0).unwrap(), 0.0);
        assert!(matches!(
            normalize(1.0, 2.0, 2.0),
            Err(SchemaError::InvalidRange { .. })
        ));
        assert!(normalize(1.0, 3.0, 2.0).is_err());
    }

    #[test]
    fn continuous_column_is_min_max_scaled() {
        let csv = "x,y\n2,a\n4,b\n6,a\n";
        let ds = load_csv_from_reader(
            csv.as_bytes(),
            &spec(r#"{"label":"y","features":[{"name":"x","kind":"cont","controllable":true}]}"#),
        )
        .unwrap();
        let col: Vec<f64> = ds.rows().iter().map(|r| r[0].as_f64()).collect();
        assert_eq!(col, vec![0.0, 0.5, 1.0]);
        assert_eq!(ds.norm_params()[0], Some(NormParams { min: 2.0, max: 6.0 }));
        assert_eq!(ds.classes(), &["a".to_string(), "b".to_string()]);
        assert_eq!(ds.labels(), &[0, 1, 0]);
    }

    #[test]
    fn label_only_file_is_rejected() {
        let csv = "y\na\nb\n";
        let err = load_csv_from_reader(csv.as_bytes(), &spec(r#"{"label":"y","features":[]}"#))
            .unwrap_err();
        assert!(matches!(err, DataError::Schema(SchemaError::NoFeatures)));
    }

    #[test]
    fn malformed_rows_name_their_line() {
        let s =
            spec(r#"{"label":"y","features":[{"name":"x","kind":"cont","controllable":true}]}"#);
        let err = load_csv_from_reader("x,y\n1,a\n2\n".as_bytes(), &s).unwrap_err();
        assert!(
            matches!(err, DataError::MalformedRow { line: 3, .. }),
            "{err}"
        );
        let err = load_csv_from_reader("x,y\n1,a\nfoo,b\n".as_bytes(), &s).unwrap_err();
        assert!(
            matches!(err, DataError::MalformedRow { line: 3, .. }),
            "{err}"
        );
    }

    #[test]
    fn closed_vocabulary_rejects_unknown_category() {
        let s = spec(
            r#"{"label":"y","features":[{"name":"c","kind":"cat","controllable":true,"vocabulary":["p","q"]}]}"#,
        );
        let err = load_csv_from_reader("c,y\np,a\nr,b\n".as_bytes(), &s).unwrap_err();
        assert!(matches!(err, DataError::UnknownCategory { line: 3, .. }));
    }

    #[test]
    fn constant_continuous_column_is_rejected() {
        let s =
            spec(r#"{"label":"y","features":[{"name":"x","kind":"cont","controllable":false}]}"#);
        let err = load_csv_from_reader("x,y\n3,a\n3,b\n".as_bytes(), &s).unwrap_err();
        assert!(matches!(err, DataError::ConstantColumn(_)));
    }

    #[test]
    fn missing_cells_are_imputed() {
        let s = spec(
            r#"{"label":"y","features":[
                {"name":"x","kind":"cont","controllable":true},
                {"name":"c","kind":"cat","controllable":true}]}"#,
        );
        let csv = "x,c,y\n0,u,a\n?,v,b\n10,?,a\n4,v,b\n";
        let ds = load_csv_from_reader(csv.as_bytes(), &s).unwrap();
        // median of {0, 10, 4} is 4 -> 0.4 after scaling
        assert_eq!(ds.row(1)[0], FeatureValue::Real(0.4));
        // mode of {u, v, v} is v
        assert_eq!(ds.row(2)[1], FeatureValue::Category(1));
    }

    #[test]
    fn schema_validation() {
        assert_eq!(FeatureSchema::new(vec![]), Err(SchemaError::NoFeatures));
        let dup = vec![
            Feature::continuous("a", true),
            Feature::continuous("a", false),
        ];
        assert!(matches!(
            FeatureSchema::new(dup),
            Err(SchemaError::DuplicateName(_))
        ));
        let zero = vec![Feature::continuous("a", true).with_weight(0.0)];
        assert_eq!(FeatureSchema::new(zero), Err(SchemaError::ZeroWeights));
        let empty = vec![Feature::categorical("c", vec![], true)];
        assert!(matches!(
            FeatureSchema::new(empty),
            Err(SchemaError::EmptyVocabulary(_))
        ));
        let rep = vec![Feature::categorical(
            "c",
            vec!["a".into(), "a".into()],
            true,
        )];
        assert!(matches!(
            FeatureSchema::new(rep),
            Err(SchemaError::DuplicateCategory { .. })
        ));
        let neg = vec![Feature::continuous("a", true).with_weight(-1.0)];
        assert!(matches!(
            FeatureSchema::new(neg),
            Err(SchemaError::InvalidWeight { .. })
        ));
    }

    #[test]
    fn partition_covers_all_features() {
        let schema = FeatureSchema::new(vec![
            Feature::continuous("age", false),
            Feature::continuous("dose", true),
            Feature::coded("smoker", 2, true),
        ])
        .unwrap();
        assert_eq!(schema.controllable(), vec![1, 2]);
        assert_eq!(schema.uncontrollable(), vec![0]);
    }

    #[test]
    fn instance_kind_checks() {
        let schema = FeatureSchema::new(vec![
            Feature::continuous("a", true),
            Feature::coded("b", 3, true),
        ])
        .unwrap();
        assert!(schema
            .check(&[FeatureValue::Real(0.3), FeatureValue::Category(2)])
            .is_ok());
        assert!(schema
            .check(&[FeatureValue::Real(1.3), FeatureValue::Category(2)])
            .is_err());
        assert!(schema
            .check(&[FeatureValue::Real(0.3), FeatureValue::Category(3)])
            .is_err());
        assert!(schema
            .check(&[FeatureValue::Category(0), FeatureValue::Category(0)])
            .is_err());
        assert!(matches!(
            schema.check(&[FeatureValue::Real(0.3)]),
            Err(SchemaError::Arity {
                expected: 2,
                actual: 1
            })
        ));
    }

    #[test]
    fn schema_json_is_validated_on_load() {
        let bad = r#"{"features":[]}"#;
        assert!(serde_json::from_str::<FeatureSchema>(bad).is_err());
    }
}
