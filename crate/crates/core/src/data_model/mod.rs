//! Mixed-type tables grouped into per-user sequences.
//!
//! A [`SequenceDataset`] is an ordered collection of [`Sequence`]s, one per
//! value of the sequence-key column, each holding its rows in file order.
//! Column kinds and categorical vocabularies live in [`TableMetadata`].

mod csv_io;
mod fixture;

pub use csv_io::{
    format_datetime, parse_datetime, read_csv, read_csv_from_reader, write_csv, write_csv_to_writer,
};
pub use fixture::{generate_fixture_dataset, generate_fixture_with, AmountModel, FixtureConfig};

use std::collections::HashMap;

use chrono::NaiveDateTime;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Column names of the raw transaction export, in file order.
pub const TRANSACTION_COLUMNS: [&str; 15] = [
    "User",
    "Card",
    "Year",
    "Month",
    "Day",
    "Time",
    "Amount",
    "Use Chip",
    "Merchant Name",
    "Merchant City",
    "Merchant State",
    "Zip",
    "MCC",
    "Errors?",
    "Is Fraud?",
];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("header mismatch: expected {expected:?}, found {found:?}")]
    HeaderMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("line {line}: expected {expected} fields, found {found}")]
    RowArity {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: column `{column}`: cannot parse {value:?} as {what}")]
    BadCell {
        line: u64,
        column: String,
        value: String,
        what: &'static str,
    },
    #[error("line {line}: column `{column}` does not allow missing values")]
    MissingNotAllowed { line: u64, column: String },
    #[error("sequence `{key}`: index column goes backwards at step {step}")]
    UnsortedSequence { key: String, step: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid metadata: {0}")]
    InvalidMetadata(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Categorical,
    Continuous,
    SequenceIndexDatetime,
    SequenceKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    /// Distinct observed values in first-occurrence order. Only meaningful for
    /// categorical columns; empty until [`fit_vocabularies`] runs.
    #[serde(default)]
    pub vocabulary: Vec<String>,
    #[serde(default)]
    pub allows_missing: bool,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        ColumnSpec {
            name: name.into(),
            kind,
            vocabulary: Vec::new(),
            allows_missing: false,
        }
    }

    pub fn nullable(mut self) -> Self {
        self.allows_missing = true;
        self
    }
}

/// Column typing for a table.
///
/// Raw exports carry the date split over four text columns, so
/// `sequence_index` is optional; every preprocessed table has one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMetadata {
    pub columns: Vec<ColumnSpec>,
    pub sequence_key: String,
    pub sequence_index: Option<String>,
}

impl TableMetadata {
    /// Metadata of the raw 15-column transaction export. Every non-key column
    /// is held as raw text until the preprocessing schemas type it.
    pub fn transactions() -> Self {
        let columns = TRANSACTION_COLUMNS
            .iter()
            .map(|&name| {
                let kind = if name == "User" {
                    ColumnKind::SequenceKey
                } else {
                    ColumnKind::Categorical
                };
                let spec = ColumnSpec::new(name, kind);
                if matches!(name, "Merchant State" | "Zip" | "Errors?") {
                    spec.nullable()
                } else {
                    spec
                }
            })
            .collect();
        TableMetadata {
            columns,
            sequence_key: "User".to_string(),
            sequence_index: None,
        }
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn key_position(&self) -> usize {
        self.index_of(&self.sequence_key)
            .expect("validated metadata has a key column")
    }

    pub fn index_position(&self) -> Option<usize> {
        self.sequence_index.as_deref().and_then(|n| self.index_of(n))
    }

    /// Number of modeled variables: every column except the sequence key and
    /// the sequence index.
    pub fn variable_count(&self) -> usize {
        self.columns
            .iter()
            .filter(|c| {
                !matches!(
                    c.kind,
                    ColumnKind::SequenceKey | ColumnKind::SequenceIndexDatetime
                )
            })
            .count()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let keys: Vec<_> = self
            .columns
            .iter()
            .filter(|c| c.kind == ColumnKind::SequenceKey)
            .collect();
        if keys.len() != 1 || keys[0].name != self.sequence_key {
            return Err(DataError::InvalidMetadata(format!(
                "expected exactly one sequence key column named `{}`",
                self.sequence_key
            )));
        }
        let indices: Vec<_> = self
            .columns
            .iter()
            .filter(|c| c.kind == ColumnKind::SequenceIndexDatetime)
            .collect();
        match (&self.sequence_index, indices.as_slice()) {
            (None, []) => {}
            (Some(name), [spec]) if &spec.name == name => {}
            _ => {
                return Err(DataError::InvalidMetadata(
                    "sequence index must name the single datetime column".into(),
                ))
            }
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(DataError::InvalidMetadata(format!(
                    "duplicate column `{}`",
                    c.name
                )));
            }
            let mut vocab = std::collections::HashSet::new();
            if !c.vocabulary.iter().all(|v| vocab.insert(v)) {
                return Err(DataError::InvalidMetadata(format!(
                    "duplicate vocabulary entry in `{}`",
                    c.name
                )));
            }
        }
        Ok(())
    }

    /// Same columns, kinds and missing rules, ignoring vocabularies.
    pub fn same_shape(&self, other: &TableMetadata) -> bool {
        self.sequence_key == other.sequence_key
            && self.sequence_index == other.sequence_index
            && self.columns.len() == other.columns.len()
            && self
                .columns
                .iter()
                .zip(&other.columns)
                .all(|(a, b)| a.name == b.name && a.kind == b.kind)
    }

    /// Hex SHA-256 over the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("metadata serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CellValue {
    Category(String),
    Number(f64),
    /// Minute resolution; seconds are always zero.
    Datetime(NaiveDateTime),
    Missing,
}

impl CellValue {
    pub fn category(s: impl Into<String>) -> Self {
        CellValue::Category(s.into())
    }

    pub fn as_category(&self) -> Option<&str> {
        match self {
            CellValue::Category(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            CellValue::Number(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_datetime(&self) -> Option<NaiveDateTime> {
        match self {
            CellValue::Datetime(t) => Some(*t),
            _ => None,
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, CellValue::Missing)
    }
}

pub type Row = Vec<CellValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub key: String,
    pub rows: Vec<Row>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Rows grouped by sequence key. Sequences appear in first-appearance order
/// of their key; rows within a sequence keep their source order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceDataset {
    pub metadata: TableMetadata,
    pub sequences: Vec<Sequence>,
}

impl SequenceDataset {
    pub fn new(metadata: TableMetadata) -> Self {
        SequenceDataset {
            metadata,
            sequences: Vec::new(),
        }
    }

    /// Groups flat rows by their key cell, preserving order.
    pub fn from_rows(
        metadata: TableMetadata,
        rows: impl IntoIterator<Item = Row>,
    ) -> Result<Self, DataError> {
        metadata.validate()?;
        let key_pos = metadata.key_position();
        let mut slots: HashMap<String, usize> = HashMap::new();
        let mut sequences: Vec<Sequence> = Vec::new();
        for row in rows {
            let key = match &row[key_pos] {
                CellValue::Category(k) => k.clone(),
                other => {
                    return Err(DataError::InvalidMetadata(format!(
                        "sequence key cell must be a category, found {other:?}"
                    )))
                }
            };
            let slot = *slots.entry(key.clone()).or_insert_with(|| {
                sequences.push(Sequence {
                    key,
                    rows: Vec::new(),
                });
                sequences.len() - 1
            });
            sequences[slot].rows.push(row);
        }
        Ok(SequenceDataset {
            metadata,
            sequences,
        })
    }

    pub fn row_count(&self) -> usize {
        self.sequences.iter().map(Sequence::len).sum()
    }

    pub fn rows(&self) -> impl Iterator<Item = &Row> {
        self.sequences.iter().flat_map(|s| s.rows.iter())
    }

    pub fn get(&self, sequence: usize, step: usize) -> Option<&Row> {
        self.sequences.get(sequence)?.rows.get(step)
    }

    pub fn sequence(&self, key: &str) -> Option<&Sequence> {
        self.sequences.iter().find(|s| s.key == key)
    }

    /// Checks that the index column never decreases inside a sequence.
    pub fn check_index_order(&self) -> Result<(), DataError> {
        let Some(pos) = self.metadata.index_position() else {
            return Ok(());
        };
        for seq in &self.sequences {
            let mut last: Option<NaiveDateTime> = None;
            for (step, row) in seq.rows.iter().enumerate() {
                if let CellValue::Datetime(t) = row[pos] {
                    if last.is_some_and(|prev| t < prev) {
                        return Err(DataError::UnsortedSequence {
                            key: seq.key.clone(),
                            step,
                        });
                    }
                    last = Some(t);
                }
            }
        }
        Ok(())
    }

    /// Keeps the rows matching `keep`, dropping sequences that end up empty.
    pub fn filter_rows(&self, mut keep: impl FnMut(&Row) -> bool) -> SequenceDataset {
        let sequences = self
            .sequences
            .iter()
            .filter_map(|s| {
                let rows: Vec<Row> = s.rows.iter().filter(|r| keep(r)).cloned().collect();
                (!rows.is_empty()).then(|| Sequence {
                    key: s.key.clone(),
                    rows,
                })
            })
            .collect();
        SequenceDataset {
            metadata: self.metadata.clone(),
            sequences,
        }
    }
}

/// Per-sequence distinct-value counts for every categorical column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabularyReport {
    pub sequence_keys: Vec<String>,
    pub per_sequence: IndexMap<String, Vec<usize>>,
}

/// Refits every categorical vocabulary from `data` in first-occurrence order.
/// Missing cells are excluded.
pub fn fit_vocabularies(
    data: &SequenceDataset,
) -> Result<(TableMetadata, VocabularyReport), DataError> {
    if data.row_count() == 0 {
        return Err(DataError::EmptyDataset);
    }
    let mut metadata = data.metadata.clone();
    let mut per_sequence = IndexMap::new();
    for (col, spec) in metadata.columns.iter_mut().enumerate() {
        if spec.kind != ColumnKind::Categorical {
            continue;
        }
        let mut global: IndexMap<&str, ()> = IndexMap::new();
        let mut counts = Vec::with_capacity(data.sequences.len());
        for seq in &data.sequences {
            let mut local: std::collections::HashSet<&str> = Default::default();
            for row in &seq.rows {
                if let CellValue::Category(v) = &row[col] {
                    global.insert(v.as_str(), ());
                    local.insert(v.as_str());
                }
            }
            counts.push(local.len());
        }
        spec.vocabulary = global.keys().map(|s| s.to_string()).collect();
        per_sequence.insert(spec.name.clone(), counts);
    }
    let report = VocabularyReport {
        sequence_keys: data.sequences.iter().map(|s| s.key.clone()).collect(),
        per_sequence,
    };
    Ok((metadata, report))
}
