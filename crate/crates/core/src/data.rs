//! Dataset ingestion and batching for the shared-task CSV schema.
//!
//! Task A files carry `id,text,fake,hate` with binary labels; Task B files
//! carry `id,text,target,severity` with free string labels whose vocabulary
//! is built in first-appearance order. Column names are remappable. Text
//! is stored NFC-normalized and otherwise untouched.

use std::collections::HashMap;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use crate::numerics::RngState;
use crate::task::Task;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("csv read failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing column {column:?} in {path}")]
    MissingColumn { column: String, path: String },
    #[error("row {row}: bad {column} value {value:?}: {reason}")]
    BadLabel {
        row: u64,
        column: String,
        value: String,
        reason: String,
    },
    #[error("row {row}: empty text")]
    EmptyText { row: u64 },
    #[error("row {row}: label {value:?} not in the model's {column} vocabulary")]
    LabelNotInVocab {
        row: u64,
        column: String,
        value: String,
    },
    #[error("dataset is empty")]
    EmptyDataset,
}

/// One labeled example; label ids index into the head's [`LabelVocab`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub id: String,
    pub text: String,
    pub label_1: usize,
    pub label_2: usize,
}

/// Ordered label strings with a string <-> id bijection.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelVocab {
    pub fn from_names<S: Into<String>>(names: Vec<S>) -> Self {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        LabelVocab { names, index }
    }

    fn insert(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        i
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Loaded dataset plus the label vocabulary of each head.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub examples: Vec<LabeledExample>,
    pub labels_1: LabelVocab,
    pub labels_2: LabelVocab,
}

/// CSV column names; the defaults depend on the task.
#[derive(Debug, Clone)]
pub struct ColumnMap {
    pub id: String,
    pub text: String,
    pub label_1: String,
    pub label_2: String,
}

impl ColumnMap {
    pub fn for_task(task: Task) -> Self {
        let (l1, l2) = task.head_names();
        ColumnMap {
            id: "id".to_string(),
            text: "text".to_string(),
            label_1: l1.to_string(),
            label_2: l2.to_string(),
        }
    }
}

fn nfc(text: &str) -> String {
    text.nfc().collect()
}

struct ColumnIndices {
    id: usize,
    text: usize,
    label_1: Option<usize>,
    label_2: Option<usize>,
}

fn resolve_columns(
    headers: &csv::StringRecord,
    cols: &ColumnMap,
    path: &Path,
    with_labels: bool,
) -> Result<ColumnIndices, DataError> {
    let find = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn {
                column: name.to_string(),
                path: path.display().to_string(),
            })
    };
    Ok(ColumnIndices {
        id: find(&cols.id)?,
        text: find(&cols.text)?,
        label_1: if with_labels {
            Some(find(&cols.label_1)?)
        } else {
            None
        },
        label_2: if with_labels {
            Some(find(&cols.label_2)?)
        } else {
            None
        },
    })
}

fn record_row(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

enum LabelMode<'a> {
    /// Build vocabularies while reading (training).
    Build,
    /// Resolve against fixed vocabularies (evaluation against a checkpoint).
    Fixed(&'a LabelVocab, &'a LabelVocab),
}

fn validate_label(task: Task, raw: &str, row: u64, column: &str) -> Result<String, DataError> {
    let value = raw.trim();
    let bad = |reason: &str| DataError::BadLabel {
        row,
        column: column.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    };
    match task {
        Task::A if value != "0" && value != "1" => Err(bad("Task A labels must be 0 or 1")),
        _ if value.is_empty() => Err(bad("empty label")),
        _ => Ok(value.to_string()),
    }
}

fn load_csv_inner(
    path: &Path,
    task: Task,
    cols: &ColumnMap,
    mode: LabelMode<'_>,
) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_path(path)?;
    let headers = reader.headers()?.clone();
    let idx = resolve_columns(&headers, cols, path, true)?;

    let fixed = matches!(mode, LabelMode::Fixed(_, _));
    let (mut labels_1, mut labels_2) = match mode {
        LabelMode::Build => match task {
            Task::A => (
                LabelVocab::from_names(vec!["0", "1"]),
                LabelVocab::from_names(vec!["0", "1"]),
            ),
            Task::B => (
                LabelVocab::from_names(Vec::<String>::new()),
                LabelVocab::from_names(Vec::<String>::new()),
            ),
        },
        LabelMode::Fixed(v1, v2) => (v1.clone(), v2.clone()),
    };

    let resolve = |vocab: &mut LabelVocab, value: String, row: u64, column: &str| {
        if fixed {
            vocab.id(&value).ok_or_else(|| DataError::LabelNotInVocab {
                row,
                column: column.to_string(),
                value,
            })
        } else {
            Ok(vocab.insert(&value))
        }
    };

    let mut examples = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record_row(&record);
        let text = nfc(record.get(idx.text).unwrap_or(""));
        if text.trim().is_empty() {
            return Err(DataError::EmptyText { row });
        }
        let id = record.get(idx.id).unwrap_or("").to_string();
        let raw_1 = record.get(idx.label_1.unwrap()).unwrap_or("");
        let raw_2 = record.get(idx.label_2.unwrap()).unwrap_or("");
        let value_1 = validate_label(task, raw_1, row, &cols.label_1)?;
        let label_1 = resolve(&mut labels_1, value_1, row, &cols.label_1)?;
        let value_2 = validate_label(task, raw_2, row, &cols.label_2)?;
        let label_2 = resolve(&mut labels_2, value_2, row, &cols.label_2)?;
        examples.push(LabeledExample {
            id,
            text,
            label_1,
            label_2,
        });
    }
    if examples.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    Ok(Dataset {
        examples,
        labels_1,
        labels_2,
    })
}

/// Loads a labeled CSV, building label vocabularies deterministically
/// (first-appearance order for Task B, fixed `0`/`1` for Task A).
pub fn load_csv(path: &Path, task: Task, cols: &ColumnMap) -> Result<Dataset, DataError> {
    load_csv_inner(path, task, cols, LabelMode::Build)
}

/// Loads a labeled CSV against the fixed vocabularies of a trained model.
pub fn load_csv_with_vocab(
    path: &Path,
    task: Task,
    cols: &ColumnMap,
    labels_1: &LabelVocab,
    labels_2: &LabelVocab,
) -> Result<Vec<LabeledExample>, DataError> {
    Ok(load_csv_inner(path, task, cols, LabelMode::Fixed(labels_1, labels_2))?.examples)
}

/// Loads prediction input: the same schema minus the label columns.
pub fn load_unlabeled_csv(path: &Path, cols: &ColumnMap) -> Result<Vec<(String, String)>, DataError> {
    let mut reader = csv::ReaderBuilder::new().from_path(path)?;
    let headers = reader.headers()?.clone();
    let idx = resolve_columns(&headers, cols, path, false)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record_row(&record);
        let text = nfc(record.get(idx.text).unwrap_or(""));
        if text.trim().is_empty() {
            return Err(DataError::EmptyText { row });
        }
        rows.push((record.get(idx.id).unwrap_or("").to_string(), text));
    }
    if rows.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    Ok(rows)
}

/// Index batches covering `0..n` exactly once: a seeded permutation when a
/// generator is supplied, original order otherwise; the final partial batch
/// is kept.
pub fn batch_indices(n: usize, batch_size: usize, rng: Option<&mut RngState>) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(rng) = rng {
        rng.shuffle(&mut order);
    }
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
