//! Datasets shipped with the crate.

use crate::schema::{load_csv_from_reader, DataError, Dataset, IngestSpec, Instance};

const BREAST_CANCER_CSV: &str = include_str!("../data/breast-cancer.csv");
const BREAST_CANCER_SPEC: &str = include_str!("../data/breast-cancer.spec.json");

/// Ingestion spec of the breast-cancer recurrence data: nine categorical
/// features, `age` and `menopause` uncontrollable.
pub fn breast_cancer_spec() -> IngestSpec {
    IngestSpec::from_json(BREAST_CANCER_SPEC).expect("bundled spec is valid")
}

/// The 286-row breast-cancer recurrence dataset (missing cells imputed with the column mode).
pub fn breast_cancer() -> Result<Dataset, DataError> {
    load_csv_from_reader(BREAST_CANCER_CSV.as_bytes(), &breast_cancer_spec())
}

/// A high-risk patient profile used in examples: age 40-49, ge40, tumor
/// 35-39, 0-2 nodes, node caps, degree 3, left breast, right_low, no irradiation.
pub fn breast_cancer_example(data: &Dataset) -> Result<Instance, DataError> {
    data.encode_raw(&[
        "40-49",
        "ge40",
        "35-39",
        "0-2",
        "yes",
        "3",
        "left",
        "right_low",
        "no",
    ])
}
