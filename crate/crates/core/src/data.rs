//! Data model and ingestion.
//!
//! A [`Dataset`] holds one [`Unit`] per experimental unit: a bounded
//! outcome, a binary treatment flag, an optional group label, a tabular
//! feature row, and a free-text description. Datasets come from CSV or
//! JSONL files via [`load_dataset`] with an explicit [`ColumnSchema`],
//! or from the synthetic generator.
//!
//! [`partition_folds`] produces the treatment-stratified fold assignment
//! used by the cross-fitting orchestrator.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Which covariate channels a dataset carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Tabular,
    Text,
    Both,
}

impl Modality {
    pub fn has_tabular(self) -> bool {
        matches!(self, Modality::Tabular | Modality::Both)
    }

    pub fn has_text(self) -> bool {
        matches!(self, Modality::Text | Modality::Both)
    }
}

/// One experimental unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub id: String,
    /// Observed outcome, bounded to [0, 1] when the schema says so.
    pub outcome: f64,
    /// Treatment indicator.
    pub treatment: bool,
    /// Optional group label for group-level effects.
    pub group: Option<String>,
    /// Tabular covariates; width is constant across the dataset.
    pub tabular: Vec<f64>,
    /// Free-text covariate; empty string when the dataset has none.
    pub text: String,
}

impl Unit {
    #[inline]
    pub fn treatment_f64(&self) -> f64 {
        if self.treatment {
            1.0
        } else {
            0.0
        }
    }
}

/// Outcome bound enforcement at load/generation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeBounds {
    /// Outcomes must lie in [0, 1].
    #[default]
    Unit,
    /// No bound check.
    None,
}

/// A validated collection of units with consistent shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub units: Vec<Unit>,
    /// Names for the tabular columns, in column order.
    pub feature_names: Vec<String>,
    pub modality: Modality,
}

impl Dataset {
    /// Validates structural invariants: non-empty, both treatment arms
    /// present, constant tabular width matching `feature_names`.
    pub fn new(units: Vec<Unit>, feature_names: Vec<String>, modality: Modality) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let width = feature_names.len();
        for (i, u) in units.iter().enumerate() {
            if u.tabular.len() != width {
                return Err(Error::Validation {
                    row: i + 1,
                    message: format!(
                        "unit {} has {} tabular values, expected {}",
                        u.id,
                        u.tabular.len(),
                        width
                    ),
                });
            }
        }
        let treated = units.iter().filter(|u| u.treatment).count();
        if treated == 0 || treated == units.len() {
            return Err(Error::Schema(
                "dataset must contain both treated and control units".into(),
            ));
        }
        if modality.has_tabular() && width == 0 {
            return Err(Error::Schema(
                "tabular modality requires at least one feature column".into(),
            ));
        }
        Ok(Self {
            units,
            feature_names,
            modality,
        })
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn tabular_width(&self) -> usize {
        self.feature_names.len()
    }

    pub fn treated_count(&self) -> usize {
        self.units.iter().filter(|u| u.treatment).count()
    }

    /// Distinct group labels with their unit counts, sorted by label.
    pub fn group_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for u in &self.units {
            if let Some(g) = &u.group {
                *counts.entry(g.clone()).or_insert(0usize) += 1;
            }
        }
        counts
    }

    /// SHA-256 over a canonical byte encoding of the dataset. Floats are
    /// encoded by their IEEE-754 bit pattern, so the hash is exact: two
    /// datasets hash equal iff they are field-by-field identical.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"dataset-v1\n");
        hasher.update(format!("{:?}\n", self.modality).as_bytes());
        for name in &self.feature_names {
            hasher.update(name.as_bytes());
            hasher.update(b"\x1f");
        }
        hasher.update(b"\n");
        for u in &self.units {
            hasher.update(u.id.as_bytes());
            hasher.update(b"\x1f");
            hasher.update(u.outcome.to_bits().to_le_bytes());
            hasher.update([u.treatment as u8]);
            match &u.group {
                Some(g) => {
                    hasher.update(b"g");
                    hasher.update(g.as_bytes());
                }
                None => hasher.update(b"-"),
            }
            hasher.update(b"\x1f");
            for v in &u.tabular {
                hasher.update(v.to_bits().to_le_bytes());
            }
            hasher.update(b"\x1f");
            hasher.update(u.text.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

/// Maps file columns (or JSONL keys) onto unit fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSchema {
    /// Unit id column; when absent, ids are `row-N` in file order.
    #[serde(default)]
    pub id_col: Option<String>,
    pub outcome_col: String,
    pub treatment_col: String,
    #[serde(default)]
    pub group_col: Option<String>,
    #[serde(default)]
    pub text_col: Option<String>,
    /// Tabular feature columns, in order. When absent, every column not
    /// claimed by another role becomes a feature (CSV: header order;
    /// JSONL: sorted key order of the first record).
    #[serde(default)]
    pub feature_cols: Option<Vec<String>>,
    #[serde(default)]
    pub outcome_bounds: OutcomeBounds,
}

impl ColumnSchema {
    fn role_columns(&self) -> Vec<&str> {
        let mut cols = vec![self.outcome_col.as_str(), self.treatment_col.as_str()];
        if let Some(c) = &self.id_col {
            cols.push(c);
        }
        if let Some(c) = &self.group_col {
            cols.push(c);
        }
        if let Some(c) = &self.text_col {
            cols.push(c);
        }
        cols
    }
}

fn parse_treatment(raw: &str, row: usize) -> Result<bool> {
    let val: f64 = raw.trim().parse().map_err(|_| Error::Validation {
        row,
        message: format!("treatment value {raw:?} is not numeric"),
    })?;
    if val == 0.0 {
        Ok(false)
    } else if val == 1.0 {
        Ok(true)
    } else {
        Err(Error::Validation {
            row,
            message: format!("treatment value {raw:?} must be 0 or 1"),
        })
    }
}

fn parse_outcome(raw: &str, bounds: OutcomeBounds, row: usize) -> Result<f64> {
    let val: f64 = raw.trim().parse().map_err(|_| Error::Validation {
        row,
        message: format!("outcome value {raw:?} is not numeric"),
    })?;
    check_outcome(val, bounds, row)?;
    Ok(val)
}

fn check_outcome(val: f64, bounds: OutcomeBounds, row: usize) -> Result<f64> {
    if !val.is_finite() {
        return Err(Error::Validation {
            row,
            message: "outcome is not finite".into(),
        });
    }
    if matches!(bounds, OutcomeBounds::Unit) && !(0.0..=1.0).contains(&val) {
        return Err(Error::Validation {
            row,
            message: format!("outcome {val} outside [0, 1]"),
        });
    }
    Ok(val)
}

fn parse_feature(raw: &str, col: &str, row: usize) -> Result<f64> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(Error::Validation {
            row,
            message: format!("feature column {col:?} is empty"),
        });
    }
    let val: f64 = trimmed.parse().map_err(|_| Error::Validation {
        row,
        message: format!("feature column {col:?} value {raw:?} is not numeric"),
    })?;
    if !val.is_finite() {
        return Err(Error::Validation {
            row,
            message: format!("feature column {col:?} is not finite"),
        });
    }
    Ok(val)
}

/// Loads a dataset from `path` according to `schema`. The format comes
/// from the extension: `.csv` for CSV with a header row, `.jsonl` or
/// `.ndjson` for one JSON object per line.
pub fn load_dataset(path: &Path, schema: &ColumnSchema) -> Result<Dataset> {
    if schema.text_col.is_none()
        && schema
            .feature_cols
            .as_ref()
            .is_some_and(|cols| cols.is_empty())
    {
        return Err(Error::Schema(
            "schema declares no covariates: feature_cols is empty and text_col is unset".into(),
        ));
    }
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    let (units, feature_names) = match ext.as_str() {
        "csv" => load_csv(path, schema)?,
        "jsonl" | "ndjson" => load_jsonl(path, schema)?,
        other => {
            return Err(Error::Schema(format!(
                "unsupported data file extension {other:?} (expected csv, jsonl, or ndjson)"
            )))
        }
    };
    let modality = match (feature_names.is_empty(), schema.text_col.is_some()) {
        (false, true) => Modality::Both,
        (false, false) => Modality::Tabular,
        (true, true) => Modality::Text,
        (true, false) => {
            return Err(Error::Schema(
                "schema resolves to no covariates (no feature columns, no text column)".into(),
            ))
        }
    };
    Dataset::new(units, feature_names, modality)
}

fn load_csv(path: &Path, schema: &ColumnSchema) -> Result<(Vec<Unit>, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
    };

    let outcome_idx = col_index(&schema.outcome_col)?;
    let treatment_idx = col_index(&schema.treatment_col)?;
    let id_idx = schema.id_col.as_deref().map(col_index).transpose()?;
    let group_idx = schema.group_col.as_deref().map(col_index).transpose()?;
    let text_idx = schema.text_col.as_deref().map(col_index).transpose()?;

    let feature_names: Vec<String> = match &schema.feature_cols {
        Some(cols) => {
            for c in cols {
                col_index(c)?;
            }
            cols.clone()
        }
        None => {
            let roles = schema.role_columns();
            headers
                .iter()
                .filter(|h| !roles.contains(&h.as_str()))
                .cloned()
                .collect()
        }
    };
    let feature_idx: Vec<usize> = feature_names
        .iter()
        .map(|c| col_index(c))
        .collect::<Result<_>>()?;

    let mut units = Vec::new();
    for (row_num, record) in reader.records().enumerate() {
        let row = row_num + 1;
        let record = record?;
        let field = |idx: usize| -> &str { record.get(idx).unwrap_or("") };

        let outcome = parse_outcome(field(outcome_idx), schema.outcome_bounds, row)?;
        let treatment = parse_treatment(field(treatment_idx), row)?;
        let id = match id_idx {
            Some(i) => field(i).to_string(),
            None => format!("row-{row}"),
        };
        let group = group_idx.map(|i| field(i).trim()).and_then(|g| {
            if g.is_empty() {
                None
            } else {
                Some(g.to_string())
            }
        });
        let text = text_idx.map(|i| field(i).to_string()).unwrap_or_default();
        let mut tabular = Vec::with_capacity(feature_idx.len());
        for (&idx, name) in feature_idx.iter().zip(&feature_names) {
            tabular.push(parse_feature(field(idx), name, row)?);
        }
        units.push(Unit {
            id,
            outcome,
            treatment,
            group,
            tabular,
            text,
        });
    }
    Ok((units, feature_names))
}

fn json_field<'a>(
    obj: &'a serde_json::Map<String, serde_json::Value>,
    key: &str,
    row: usize,
) -> Result<&'a serde_json::Value> {
    obj.get(key).ok_or_else(|| Error::Validation {
        row,
        message: format!("missing key {key:?}"),
    })
}

fn json_number(value: &serde_json::Value, key: &str, row: usize) -> Result<f64> {
    match value {
        serde_json::Value::Number(n) => n.as_f64().ok_or_else(|| Error::Validation {
            row,
            message: format!("key {key:?} is not representable as f64"),
        }),
        serde_json::Value::String(s) => s.trim().parse().map_err(|_| Error::Validation {
            row,
            message: format!("key {key:?} value {s:?} is not numeric"),
        }),
        other => Err(Error::Validation {
            row,
            message: format!("key {key:?} has non-numeric type: {other}"),
        }),
    }
}

fn load_jsonl(path: &Path, schema: &ColumnSchema) -> Result<(Vec<Unit>, Vec<String>)> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);

    let mut feature_names: Option<Vec<String>> = schema.feature_cols.clone();
    let mut units = Vec::new();

    for (line_num, line) in reader.lines().enumerate() {
        let row = line_num + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| Error::Validation {
                row,
                message: format!("invalid JSON: {e}"),
            })?;
        let obj = value.as_object().ok_or_else(|| Error::Validation {
            row,
            message: "line is not a JSON object".into(),
        })?;

        // Infer feature columns from the first record when the schema
        // leaves them open. Keys are sorted for a stable order.
        if feature_names.is_none() {
            let roles = schema.role_columns();
            let mut inferred: Vec<String> = obj
                .keys()
                .filter(|k| !roles.contains(&k.as_str()))
                .cloned()
                .collect();
            inferred.sort();
            feature_names = Some(inferred);
        }
        let names = feature_names.as_ref().unwrap();

        let outcome_val = json_field(obj, &schema.outcome_col, row)?;
        let outcome = check_outcome(
            json_number(outcome_val, &schema.outcome_col, row)?,
            schema.outcome_bounds,
            row,
        )?;

        let treatment_val = json_field(obj, &schema.treatment_col, row)?;
        let treatment = match treatment_val {
            serde_json::Value::Bool(b) => *b,
            other => {
                let v = json_number(other, &schema.treatment_col, row)?;
                if v == 0.0 {
                    false
                } else if v == 1.0 {
                    true
                } else {
                    return Err(Error::Validation {
                        row,
                        message: format!("treatment value {v} must be 0 or 1"),
                    });
                }
            }
        };

        let id = match &schema.id_col {
            Some(key) => match json_field(obj, key, row)? {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            },
            None => format!("row-{row}"),
        };

        let group = match &schema.group_col {
            Some(key) => match obj.get(key) {
                None | Some(serde_json::Value::Null) => None,
                Some(serde_json::Value::String(s)) if s.trim().is_empty() => None,
                Some(serde_json::Value::String(s)) => Some(s.clone()),
                Some(other) => Some(other.to_string()),
            },
            None => None,
        };

        let text = match &schema.text_col {
            Some(key) => match json_field(obj, key, row)? {
                serde_json::Value::String(s) => s.clone(),
                other => {
                    return Err(Error::Validation {
                        row,
                        message: format!("text key {key:?} is not a string: {other}"),
                    })
                }
            },
            None => String::new(),
        };

        let mut tabular = Vec::with_capacity(names.len());
        for name in names {
            let v = json_number(json_field(obj, name, row)?, name, row)?;
            if !v.is_finite() {
                return Err(Error::Validation {
                    row,
                    message: format!("feature key {name:?} is not finite"),
                });
            }
            tabular.push(v);
        }

        units.push(Unit {
            id,
            outcome,
            treatment,
            group,
            tabular,
            text,
        });
    }

    let names = feature_names.unwrap_or_default();
    Ok((units, names))
}

/// Assignment of each unit to one of `k_folds` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k_folds: usize,
    /// `fold_of[i]` is the fold of unit `i` in dataset order.
    pub fold_of: Vec<usize>,
    pub seed: u64,
}

impl FoldAssignment {
    /// Unit indices in fold `k`, ascending.
    pub fn fold_indices(&self, k: usize) -> Vec<usize> {
        self.fold_of
            .iter()
            .enumerate()
            .filter(|(_, &f)| f == k)
            .map(|(i, _)| i)
            .collect()
    }

    /// Unit indices outside fold `k`, ascending.
    pub fn complement_indices(&self, k: usize) -> Vec<usize> {
        self.fold_of
            .iter()
            .enumerate()
            .filter(|(_, &f)| f != k)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k_folds];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Splits a dataset into `k` folds, stratified by treatment arm.
///
/// Treated and control indices are shuffled separately with a ChaCha8
/// stream seeded from `seed`, concatenated, and dealt round-robin over
/// folds. Consequences: total fold sizes differ by at most one, each
/// arm's fold counts differ by at most one, and every fold contains
/// both arms whenever each arm has at least `k` units.
pub fn partition_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    let n = dataset.len();
    if k < 2 {
        return Err(Error::Parameter(format!("k_folds must be >= 2, got {k}")));
    }
    if k > n {
        return Err(Error::Parameter(format!(
            "k_folds {k} exceeds dataset size {n}"
        )));
    }

    let mut treated: Vec<usize> = Vec::new();
    let mut control: Vec<usize> = Vec::new();
    for (i, u) in dataset.units.iter().enumerate() {
        if u.treatment {
            treated.push(i);
        } else {
            control.push(i);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    treated.shuffle(&mut rng);
    control.shuffle(&mut rng);

    let mut fold_of = vec![0usize; n];
    for (pos, &unit_idx) in treated.iter().chain(control.iter()).enumerate() {
        fold_of[unit_idx] = pos % k;
    }

    Ok(FoldAssignment {
        k_folds: k,
        fold_of,
        seed,
    })
}
