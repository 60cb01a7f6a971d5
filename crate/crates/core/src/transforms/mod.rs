//! Fitted, invertible preprocessing pipelines.
//!
//! Every [`Transform`] consumes a set of named columns and produces a set of
//! replacement columns at the position of the first consumed one. A
//! [`FittedPipeline`] chains them and can run the chain backwards, so data
//! generated in the transformed space decodes to the raw representation.

mod ops;

pub use ops::{
    assemble_datetime, format_amount, merge_location, parse_amount, split_datetime, split_location,
    LabelMap, QuantileBinning, StandardizationStats, LOCATION_SEPARATOR,
};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_model::{
    fit_vocabularies, CellValue, ColumnKind, ColumnSpec, DataError, Row, Sequence, SequenceDataset,
    TableMetadata,
};

pub const PIPELINE_FORMAT_VERSION: u32 = 1;

pub const ZIP_SENTINEL: &str = "not applicable";
pub const STATE_SENTINEL: &str = "not applicable";
pub const ERRORS_SENTINEL: &str = "none";
pub const LOCATION_COLUMN: &str = "Location";
pub const DATETIME_COLUMN: &str = "Datetime";
pub const AMOUNT_BINS: usize = 10;

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("unknown schema {0}; expected 1 through 5")]
    UnknownSchema(u8),
    #[error("column `{0}` not present")]
    MissingColumn(String),
    #[error("invalid date {0:?}")]
    BadDate(String),
    #[error("invalid time {0:?}, expected HH:MM")]
    BadTime(String),
    #[error("invalid amount {0:?}, expected `$` followed by a decimal")]
    BadAmount(String),
    #[error("column `{column}`: {value:?} is neither the true nor the false token")]
    BadBoolean { column: String, value: String },
    #[error("value {0:?} contains the location separator")]
    SeparatorCollision(String),
    #[error("location {0:?} does not split into four fields")]
    BadLocation(String),
    #[error("column `{column}`: unseen category {value:?}")]
    UnseenCategory { column: String, value: String },
    #[error("column `{0}`: cannot fit on constant or empty values")]
    DegenerateFit(String),
    #[error("column `{column}` already contains the sentinel {sentinel:?}")]
    SentinelCollision { column: String, sentinel: String },
    #[error("column `{column}`: unexpected cell {cell}")]
    UnexpectedCell { column: String, cell: String },
    #[error("table shape does not match the pipeline's {0} metadata")]
    ShapeMismatch(&'static str),
    #[error("unsupported pipeline format version {0}")]
    UnsupportedVersion(u32),
    #[error("sequence `{sequence}`, row {row}: {source}")]
    At {
        sequence: String,
        row: usize,
        #[source]
        source: Box<TransformError>,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn unexpected(column: &str, cell: &CellValue) -> TransformError {
    TransformError::UnexpectedCell {
        column: column.to_string(),
        cell: format!("{cell:?}"),
    }
}

fn category<'a>(column: &str, cell: &'a CellValue) -> Result<&'a str, TransformError> {
    cell.as_category().ok_or_else(|| unexpected(column, cell))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatetimeAssembly {
    pub year: String,
    pub month: String,
    pub day: String,
    pub time: String,
    pub target: String,
    /// Whether the source wrote months and days with a leading zero.
    pub pad_month_day: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentinelFill {
    pub column: String,
    pub sentinel: String,
}

/// Numeric-looking identifiers written as floats (`91750.0`) lose the
/// trailing `.0`; the inverse restores it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stringify {
    pub column: String,
    pub strip_float_suffix: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BooleanFlag {
    pub column: String,
    pub true_token: String,
    pub false_token: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationMerge {
    pub name: String,
    pub city: String,
    pub state: String,
    pub zip: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "transform", rename_all = "snake_case")]
pub enum Transform {
    AssembleDatetime(DatetimeAssembly),
    ParseAmount { column: String },
    FillMissingSentinel(SentinelFill),
    StringifyColumn(Stringify),
    BooleanFlag(BooleanFlag),
    MergeLocation(LocationMerge),
    LabelEncode(LabelMap),
    QuantileLogBin(QuantileBinning),
    StandardizeCubeRoot(StandardizationStats),
}

impl Transform {
    /// Columns consumed, in the order `forward` expects their cells.
    pub fn inputs(&self) -> Vec<&str> {
        match self {
            Transform::AssembleDatetime(a) => vec![&a.year, &a.month, &a.day, &a.time],
            Transform::MergeLocation(m) => vec![&m.name, &m.city, &m.state, &m.zip],
            Transform::ParseAmount { column } => vec![column],
            Transform::FillMissingSentinel(f) => vec![&f.column],
            Transform::StringifyColumn(s) => vec![&s.column],
            Transform::BooleanFlag(b) => vec![&b.column],
            Transform::LabelEncode(m) => vec![&m.column],
            Transform::QuantileLogBin(q) => vec![&q.column],
            Transform::StandardizeCubeRoot(s) => vec![&s.column],
        }
    }

    fn outputs(&self, input: &TableMetadata) -> Result<Vec<ColumnSpec>, TransformError> {
        let source = |name: &str| {
            input
                .column(name)
                .cloned()
                .ok_or_else(|| TransformError::MissingColumn(name.to_string()))
        };
        let retyped = |name: &str, kind: ColumnKind| -> Result<ColumnSpec, TransformError> {
            let mut spec = source(name)?;
            spec.kind = kind;
            spec.vocabulary.clear();
            Ok(spec)
        };
        Ok(match self {
            Transform::AssembleDatetime(a) => {
                vec![ColumnSpec::new(&a.target, ColumnKind::SequenceIndexDatetime)]
            }
            Transform::MergeLocation(m) => vec![ColumnSpec::new(&m.target, ColumnKind::Categorical)],
            Transform::ParseAmount { column } | Transform::StandardizeCubeRoot(StandardizationStats { column, .. }) => {
                vec![retyped(column, ColumnKind::Continuous)?]
            }
            Transform::FillMissingSentinel(f) => {
                let mut spec = retyped(&f.column, ColumnKind::Categorical)?;
                spec.allows_missing = false;
                vec![spec]
            }
            Transform::StringifyColumn(Stringify { column, .. })
            | Transform::BooleanFlag(BooleanFlag { column, .. })
            | Transform::LabelEncode(LabelMap { column, .. })
            | Transform::QuantileLogBin(QuantileBinning { column, .. }) => {
                vec![retyped(column, ColumnKind::Categorical)?]
            }
        })
    }

    fn forward(&self, cells: &[CellValue]) -> Result<Vec<CellValue>, TransformError> {
        let cell = &cells[0];
        Ok(match self {
            Transform::AssembleDatetime(a) => {
                let t = assemble_datetime(
                    category(&a.year, &cells[0])?,
                    category(&a.month, &cells[1])?,
                    category(&a.day, &cells[2])?,
                    category(&a.time, &cells[3])?,
                )?;
                vec![CellValue::Datetime(t)]
            }
            Transform::MergeLocation(m) => {
                let merged = merge_location(
                    category(&m.name, &cells[0])?,
                    category(&m.city, &cells[1])?,
                    category(&m.state, &cells[2])?,
                    category(&m.zip, &cells[3])?,
                )?;
                vec![CellValue::Category(merged)]
            }
            Transform::ParseAmount { column } => vec![match cell {
                CellValue::Missing => CellValue::Missing,
                c => CellValue::Number(parse_amount(category(column, c)?)?),
            }],
            Transform::FillMissingSentinel(f) => vec![match cell {
                CellValue::Missing => CellValue::Category(f.sentinel.clone()),
                c => c.clone(),
            }],
            Transform::StringifyColumn(s) => vec![match cell {
                CellValue::Category(v) if s.strip_float_suffix => {
                    CellValue::Category(v.strip_suffix(".0").unwrap_or(v).to_string())
                }
                CellValue::Number(x) => CellValue::Category(x.to_string()),
                c => c.clone(),
            }],
            Transform::BooleanFlag(b) => vec![match cell {
                CellValue::Missing => CellValue::Missing,
                c => {
                    let v = category(&b.column, c)?;
                    if v == b.true_token {
                        CellValue::category("true")
                    } else if v == b.false_token {
                        CellValue::category("false")
                    } else {
                        return Err(TransformError::BadBoolean {
                            column: b.column.clone(),
                            value: v.to_string(),
                        });
                    }
                }
            }],
            Transform::LabelEncode(m) => vec![match cell {
                CellValue::Missing => CellValue::Missing,
                c => CellValue::Category(m.encode(category(&m.column, c)?)?),
            }],
            Transform::QuantileLogBin(q) => vec![match cell {
                CellValue::Number(x) => CellValue::Category(q.bin(*x).to_string()),
                CellValue::Missing => CellValue::Missing,
                c => return Err(unexpected(&q.column, c)),
            }],
            Transform::StandardizeCubeRoot(s) => vec![match cell {
                CellValue::Number(x) => CellValue::Number(s.forward(*x)),
                CellValue::Missing => CellValue::Missing,
                c => return Err(unexpected(&s.column, c)),
            }],
        })
    }

    fn backward(&self, cells: &[CellValue]) -> Result<Vec<CellValue>, TransformError> {
        let cell = &cells[0];
        Ok(match self {
            Transform::AssembleDatetime(a) => {
                let t = cell.as_datetime().ok_or_else(|| unexpected(&a.target, cell))?;
                let (y, m, d, hm) = split_datetime(&t, a.pad_month_day);
                [y, m, d, hm].into_iter().map(CellValue::Category).collect()
            }
            Transform::MergeLocation(m) => split_location(category(&m.target, cell)?)?
                .into_iter()
                .map(CellValue::Category)
                .collect(),
            Transform::ParseAmount { column } => vec![match cell {
                CellValue::Number(x) => CellValue::Category(format_amount(*x)),
                CellValue::Missing => CellValue::Missing,
                c => return Err(unexpected(column, c)),
            }],
            Transform::FillMissingSentinel(f) => vec![match cell {
                CellValue::Category(v) if *v == f.sentinel => CellValue::Missing,
                c => c.clone(),
            }],
            Transform::StringifyColumn(s) => vec![match cell {
                CellValue::Category(v) if s.strip_float_suffix && is_integer_literal(v) => {
                    CellValue::Category(format!("{v}.0"))
                }
                c => c.clone(),
            }],
            Transform::BooleanFlag(b) => vec![match cell {
                CellValue::Missing => CellValue::Missing,
                c => match category(&b.column, c)? {
                    "true" => CellValue::Category(b.true_token.clone()),
                    "false" => CellValue::Category(b.false_token.clone()),
                    other => {
                        return Err(TransformError::BadBoolean {
                            column: b.column.clone(),
                            value: other.to_string(),
                        })
                    }
                },
            }],
            Transform::LabelEncode(m) => vec![match cell {
                CellValue::Missing => CellValue::Missing,
                c => CellValue::Category(m.decode(category(&m.column, c)?)?),
            }],
            Transform::QuantileLogBin(q) => vec![match cell {
                CellValue::Missing => CellValue::Missing,
                c => {
                    let code = category(&q.column, c)?;
                    let rep = code
                        .parse::<usize>()
                        .ok()
                        .and_then(|b| q.representative(b))
                        .ok_or_else(|| TransformError::UnseenCategory {
                            column: q.column.clone(),
                            value: code.to_string(),
                        })?;
                    CellValue::Number(rep)
                }
            }],
            Transform::StandardizeCubeRoot(s) => vec![match cell {
                CellValue::Number(y) => CellValue::Number(s.inverse(*y)),
                CellValue::Missing => CellValue::Missing,
                c => return Err(unexpected(&s.column, c)),
            }],
        })
    }
}

fn is_integer_literal(v: &str) -> bool {
    let digits = v.strip_prefix('-').unwrap_or(v);
    !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())
}

/// Positions of a step's consumed columns in its input table and the insert
/// position of its produced columns.
struct Placement {
    consumed: Vec<usize>,
    insert_at: usize,
    produced: usize,
}

fn placement(step: &Transform, input: &TableMetadata, produced: usize) -> Result<Placement, TransformError> {
    let consumed = step
        .inputs()
        .into_iter()
        .map(|n| input.index_of(n).ok_or_else(|| TransformError::MissingColumn(n.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let insert_at = *consumed.iter().min().expect("every transform consumes a column");
    Ok(Placement {
        consumed,
        insert_at,
        produced,
    })
}

fn output_metadata(step: &Transform, input: &TableMetadata) -> Result<TableMetadata, TransformError> {
    let outputs = step.outputs(input)?;
    let place = placement(step, input, outputs.len())?;
    let mut columns: Vec<ColumnSpec> = input
        .columns
        .iter()
        .enumerate()
        .filter(|(i, _)| !place.consumed.contains(i))
        .map(|(_, c)| c.clone())
        .collect();
    let mut sequence_index = input.sequence_index.clone();
    if sequence_index.as_deref().is_some_and(|n| step.inputs().contains(&n)) {
        sequence_index = None;
    }
    if let Some(idx) = outputs.iter().find(|c| c.kind == ColumnKind::SequenceIndexDatetime) {
        sequence_index = Some(idx.name.clone());
    }
    columns.splice(place.insert_at..place.insert_at, outputs);
    let meta = TableMetadata {
        columns,
        sequence_key: input.sequence_key.clone(),
        sequence_index,
    };
    meta.validate()?;
    Ok(meta)
}

fn forward_row(step: &Transform, place: &Placement, row: &Row) -> Result<Row, TransformError> {
    let cells: Vec<CellValue> = place.consumed.iter().map(|&i| row[i].clone()).collect();
    let produced = step.forward(&cells)?;
    let mut out: Row = row
        .iter()
        .enumerate()
        .filter(|(i, _)| !place.consumed.contains(i))
        .map(|(_, c)| c.clone())
        .collect();
    out.splice(place.insert_at..place.insert_at, produced);
    Ok(out)
}

fn backward_row(step: &Transform, place: &Placement, input_width: usize, row: &Row) -> Result<Row, TransformError> {
    let produced = &row[place.insert_at..place.insert_at + place.produced];
    let restored = step.backward(produced)?;
    let mut kept = row[..place.insert_at]
        .iter()
        .chain(&row[place.insert_at + place.produced..]);
    let mut out: Vec<Option<CellValue>> = vec![None; input_width];
    for (&pos, cell) in place.consumed.iter().zip(restored) {
        out[pos] = Some(cell);
    }
    for slot in out.iter_mut().filter(|s| s.is_none()) {
        *slot = kept.next().cloned();
    }
    Ok(out.into_iter().map(|c| c.unwrap_or(CellValue::Missing)).collect())
}

fn map_rows(
    data: &SequenceDataset,
    metadata: TableMetadata,
    mut f: impl FnMut(&Row) -> Result<Row, TransformError>,
) -> Result<SequenceDataset, TransformError> {
    let sequences = data
        .sequences
        .iter()
        .map(|seq| {
            let rows = seq
                .rows
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    f(r).map_err(|e| TransformError::At {
                        sequence: seq.key.clone(),
                        row: i,
                        source: Box::new(e),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Sequence {
                key: seq.key.clone(),
                rows,
            })
        })
        .collect::<Result<Vec<_>, TransformError>>()?;
    Ok(SequenceDataset { metadata, sequences })
}

/// An ordered chain of fitted transforms plus the table shape at every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPipeline {
    pub format_version: u32,
    pub schema: u8,
    pub steps: Vec<Transform>,
    /// `stages[i]` is the input shape of `steps[i]`; the last entry is the
    /// output shape.
    pub stages: Vec<TableMetadata>,
    pub source_metadata: TableMetadata,
    /// Output shape with vocabularies fitted on the training data.
    pub target_metadata: TableMetadata,
}

impl FittedPipeline {
    pub fn apply(&self, data: &SequenceDataset) -> Result<SequenceDataset, TransformError> {
        if !data.metadata.same_shape(&self.source_metadata) {
            return Err(TransformError::ShapeMismatch("source"));
        }
        let mut current = data.clone();
        for (i, step) in self.steps.iter().enumerate() {
            let place = placement(step, &self.stages[i], step.outputs(&self.stages[i])?.len())?;
            current = map_rows(&current, self.stages[i + 1].clone(), |r| forward_row(step, &place, r))?;
        }
        current.metadata = self.target_metadata.clone();
        current.check_index_order()?;
        Ok(current)
    }

    pub fn invert(&self, data: &SequenceDataset) -> Result<SequenceDataset, TransformError> {
        if !data.metadata.same_shape(&self.target_metadata) {
            return Err(TransformError::ShapeMismatch("target"));
        }
        let mut current = data.clone();
        for (i, step) in self.steps.iter().enumerate().rev() {
            let input = &self.stages[i];
            let place = placement(step, input, step.outputs(input)?.len())?;
            let width = input.columns.len();
            current = map_rows(&current, input.clone(), |r| backward_row(step, &place, width, r))?;
        }
        current.metadata = self.source_metadata.clone();
        Ok(current)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TransformError> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TransformError> {
        let pipeline: FittedPipeline = serde_json::from_slice(&fs::read(path)?)?;
        if pipeline.format_version != PIPELINE_FORMAT_VERSION {
            return Err(TransformError::UnsupportedVersion(pipeline.format_version));
        }
        Ok(pipeline)
    }
}

struct Builder {
    steps: Vec<Transform>,
    stages: Vec<TableMetadata>,
    current: SequenceDataset,
}

impl Builder {
    fn push(&mut self, step: Transform) -> Result<(), TransformError> {
        let input = self.stages.last().expect("seeded with the source shape").clone();
        let output = output_metadata(&step, &input)?;
        let place = placement(&step, &input, step.outputs(&input)?.len())?;
        self.current = map_rows(&self.current, output.clone(), |r| forward_row(&step, &place, r))?;
        self.stages.push(output);
        self.steps.push(step);
        Ok(())
    }

    fn column_cells(&self, column: &str) -> Result<Vec<&CellValue>, TransformError> {
        let idx = self
            .current
            .metadata
            .index_of(column)
            .ok_or_else(|| TransformError::MissingColumn(column.to_string()))?;
        Ok(self.current.rows().map(|r| &r[idx]).collect())
    }

    fn categories(&self, column: &str) -> Result<Vec<&str>, TransformError> {
        Ok(self
            .column_cells(column)?
            .into_iter()
            .filter_map(CellValue::as_category)
            .collect())
    }

    fn numbers(&self, column: &str) -> Result<Vec<f64>, TransformError> {
        Ok(self
            .column_cells(column)?
            .into_iter()
            .filter_map(CellValue::as_number)
            .collect())
    }

    fn sentinel(&mut self, column: &str, sentinel: &str) -> Result<(), TransformError> {
        if self.categories(column)?.contains(&sentinel) {
            return Err(TransformError::SentinelCollision {
                column: column.to_string(),
                sentinel: sentinel.to_string(),
            });
        }
        self.push(Transform::FillMissingSentinel(SentinelFill {
            column: column.to_string(),
            sentinel: sentinel.to_string(),
        }))
    }

    fn stringify(&mut self, column: &str) -> Result<(), TransformError> {
        let values = self.categories(column)?;
        let strip = !values.is_empty()
            && values
                .iter()
                .all(|v| v.strip_suffix(".0").is_some_and(is_integer_literal));
        self.push(Transform::StringifyColumn(Stringify {
            column: column.to_string(),
            strip_float_suffix: strip,
        }))
    }

    fn label_encode(&mut self, column: &str) -> Result<(), TransformError> {
        let map = LabelMap::fit(column, self.categories(column)?);
        self.push(Transform::LabelEncode(map))
    }
}

/// Fits preprocessing schema `n` (1 through 5) on raw transaction data.
///
/// 1. datetime assembly, `$` amounts to numbers, merchant name and zip as
///    plain strings, sentinels for missing zip/state/errors, boolean fraud flag
/// 2. schema 1, then the four merchant columns merged into `Location`
/// 3. schema 2, then label codes for `Use Chip`, `MCC`, `Errors?`,
///    `Location` and `Is Fraud?`
/// 4. schema 3, then `Amount` as one of 10 signed-log quantile bins
/// 5. schema 3, then `Amount` z-scored and cube-rooted
pub fn build_schema(n: u8, data: &SequenceDataset) -> Result<FittedPipeline, TransformError> {
    if !(1..=5).contains(&n) {
        return Err(TransformError::UnknownSchema(n));
    }
    data.metadata.validate()?;
    let (source_metadata, _) = fit_vocabularies(data)?;
    let mut b = Builder {
        steps: Vec::new(),
        stages: vec![data.metadata.clone()],
        current: data.clone(),
    };

    let pad = b
        .categories("Month")?
        .iter()
        .chain(b.categories("Day")?.iter())
        .any(|v| v.len() == 2 && v.starts_with('0'));
    b.push(Transform::AssembleDatetime(DatetimeAssembly {
        year: "Year".into(),
        month: "Month".into(),
        day: "Day".into(),
        time: "Time".into(),
        target: DATETIME_COLUMN.into(),
        pad_month_day: pad,
    }))?;
    b.push(Transform::ParseAmount {
        column: "Amount".into(),
    })?;
    b.stringify("Merchant Name")?;
    b.stringify("Zip")?;
    b.sentinel("Zip", ZIP_SENTINEL)?;
    b.sentinel("Merchant State", STATE_SENTINEL)?;
    b.sentinel("Errors?", ERRORS_SENTINEL)?;
    let fraud = b.categories("Is Fraud?")?;
    let (true_token, false_token) = if fraud.iter().any(|v| *v == "true" || *v == "false") {
        ("true", "false")
    } else {
        ("Yes", "No")
    };
    b.push(Transform::BooleanFlag(BooleanFlag {
        column: "Is Fraud?".into(),
        true_token: true_token.into(),
        false_token: false_token.into(),
    }))?;

    if n >= 2 {
        b.push(Transform::MergeLocation(LocationMerge {
            name: "Merchant Name".into(),
            city: "Merchant City".into(),
            state: "Merchant State".into(),
            zip: "Zip".into(),
            target: LOCATION_COLUMN.into(),
        }))?;
    }
    if n >= 3 {
        for column in ["Use Chip", "MCC", "Errors?", LOCATION_COLUMN, "Is Fraud?"] {
            b.label_encode(column)?;
        }
    }
    match n {
        4 => {
            let q = QuantileBinning::fit("Amount", &b.numbers("Amount")?, AMOUNT_BINS)?;
            b.push(Transform::QuantileLogBin(q))?;
        }
        5 => {
            let s = StandardizationStats::fit("Amount", &b.numbers("Amount")?)?;
            b.push(Transform::StandardizeCubeRoot(s))?;
        }
        _ => {}
    }

    b.current.check_index_order()?;
    let (target_metadata, _) = fit_vocabularies(&b.current)?;
    Ok(FittedPipeline {
        format_version: PIPELINE_FORMAT_VERSION,
        schema: n,
        steps: b.steps,
        stages: b.stages,
        source_metadata,
        target_metadata,
    })
}

/// Reads the training-side label code of the fraud flag's positive class, if
/// the pipeline label-encodes it.
pub fn encoded_fraud_token(pipeline: &FittedPipeline) -> String {
    pipeline
        .steps
        .iter()
        .find_map(|s| match s {
            Transform::LabelEncode(m) if m.column == "Is Fraud?" => m.encode("true").ok(),
            _ => None,
        })
        .unwrap_or_else(|| "true".to_string())
}
