//! Column layout of the network inputs and outputs, and row encoding.

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::CparError;
use crate::data_model::{CellValue, ColumnKind, Row, SequenceDataset, TableMetadata};

/// Standardization of a real-valued quantity inside the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scale {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Scale {
    fn fit(values: &[f64]) -> Scale {
        if values.is_empty() {
            return Scale {
                mean: 0.0,
                std: 1.0,
                min: 0.0,
                max: 0.0,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Scale {
            mean,
            std,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn standardize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn restore(&self, z: f64) -> f64 {
        self.mean + self.std * z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Variable {
    Categorical {
        column: String,
        position: usize,
        vocabulary: Vec<String>,
    },
    Continuous {
        column: String,
        position: usize,
        scale: Scale,
        allows_missing: bool,
        missing_rate: f64,
    },
}

impl Variable {
    pub fn column(&self) -> &str {
        match self {
            Variable::Categorical { column, .. } | Variable::Continuous { column, .. } => column,
        }
    }

    pub fn position(&self) -> usize {
        match self {
            Variable::Categorical { position, .. } | Variable::Continuous { position, .. } => *position,
        }
    }

    /// Width in the encoded row.
    pub fn input_width(&self) -> usize {
        match self {
            Variable::Categorical { vocabulary, .. } => vocabulary.len(),
            Variable::Continuous { .. } => 2,
        }
    }

    /// Width of the output head.
    pub fn output_width(&self) -> usize {
        match self {
            Variable::Categorical { vocabulary, .. } => vocabulary.len(),
            Variable::Continuous { .. } => 3,
        }
    }

    fn encode_into(&self, cell: &CellValue, out: &mut Vec<f64>) -> Result<(), CparError> {
        match self {
            Variable::Categorical { column, vocabulary, .. } => {
                let idx = category_index(column, vocabulary, cell)?;
                out.extend((0..vocabulary.len()).map(|i| if i == idx { 1.0 } else { 0.0 }));
            }
            Variable::Continuous { column, scale, .. } => match cell {
                CellValue::Missing => out.extend([0.0, 1.0]),
                CellValue::Number(x) => out.extend([scale.standardize(*x), 0.0]),
                other => return Err(CparError::BadCell(column.clone(), format!("{other:?}"))),
            },
        }
        Ok(())
    }
}

fn category_index(column: &str, vocabulary: &[String], cell: &CellValue) -> Result<usize, CparError> {
    let value = match cell {
        CellValue::Category(v) => v,
        other => return Err(CparError::BadCell(column.to_string(), format!("{other:?}"))),
    };
    vocabulary
        .iter()
        .position(|v| v == value)
        .ok_or_else(|| CparError::UnknownCategory(column.to_string(), value.clone()))
}

/// Target of one modeled variable at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Category(usize),
    Value(Option<f64>),
}

/// A sequence prepared for the network.
#[derive(Debug, Clone)]
pub struct EncodedSequence {
    /// Row encodings fed as the input of the following step.
    pub inputs: Vec<Vec<f64>>,
    /// Per step, one target per variable in layout order.
    pub targets: Vec<Vec<Target>>,
    /// Standardized start time (step 0) or log gap (later steps).
    pub gaps: Vec<f64>,
    pub context: Vec<f64>,
}

pub(crate) fn minutes(t: &NaiveDateTime) -> f64 {
    (t.and_utc().timestamp() / 60) as f64
}

pub(crate) fn from_minutes(m: i64) -> Option<NaiveDateTime> {
    DateTime::from_timestamp(m.checked_mul(60)?, 0).map(|d| d.naive_utc())
}

/// How the network sees a table: modeled variables, context columns and the
/// datetime index modeled as a start time followed by gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub metadata: TableMetadata,
    pub variables: Vec<Variable>,
    pub context: Vec<Variable>,
    pub key_position: usize,
    pub index_position: usize,
    /// Absolute start time in minutes since the Unix epoch.
    pub start: Scale,
    /// `ln(1 + gap minutes)`.
    pub gap: Scale,
    pub mean_length: f64,
}

impl Layout {
    pub fn fit(data: &SequenceDataset, context_columns: &[String]) -> Result<Layout, CparError> {
        let metadata = &data.metadata;
        metadata.validate()?;
        if data.sequences.is_empty() {
            return Err(CparError::EmptyData);
        }
        let index_position = metadata.index_position().ok_or(CparError::NoSequenceIndex)?;
        for c in context_columns {
            let spec = metadata.column(c).ok_or_else(|| CparError::UnknownColumn(c.clone()))?;
            if !matches!(spec.kind, ColumnKind::Categorical | ColumnKind::Continuous) {
                return Err(CparError::UnknownColumn(c.clone()));
            }
        }

        let mut variables = Vec::new();
        let mut context = Vec::new();
        for (position, spec) in metadata.columns.iter().enumerate() {
            let var = match spec.kind {
                ColumnKind::Categorical => {
                    if spec.vocabulary.is_empty() {
                        return Err(CparError::EmptyVocabulary(spec.name.clone()));
                    }
                    Variable::Categorical {
                        column: spec.name.clone(),
                        position,
                        vocabulary: spec.vocabulary.clone(),
                    }
                }
                ColumnKind::Continuous => {
                    let cells: Vec<&CellValue> = data.rows().map(|r| &r[position]).collect();
                    let values: Vec<f64> = cells.iter().filter_map(|c| c.as_number()).collect();
                    Variable::Continuous {
                        column: spec.name.clone(),
                        position,
                        scale: Scale::fit(&values),
                        allows_missing: spec.allows_missing,
                        missing_rate: 1.0 - values.len() as f64 / cells.len().max(1) as f64,
                    }
                }
                _ => continue,
            };
            if context_columns.contains(&spec.name) {
                context.push(var);
            } else {
                variables.push(var);
            }
        }

        let mut starts = Vec::new();
        let mut gaps = Vec::new();
        for seq in &data.sequences {
            let times: Vec<f64> = seq
                .rows
                .iter()
                .map(|r| r[index_position].as_datetime().map(|t| minutes(&t)))
                .collect::<Option<_>>()
                .ok_or(CparError::NoSequenceIndex)?;
            if let Some(&first) = times.first() {
                starts.push(first);
            }
            gaps.extend(times.windows(2).map(|w| (w[1] - w[0]).max(0.0).ln_1p()));
        }
        Ok(Layout {
            metadata: metadata.clone(),
            variables,
            context,
            key_position: metadata.key_position(),
            index_position,
            start: Scale::fit(&starts),
            gap: Scale::fit(&gaps),
            mean_length: data.row_count() as f64 / data.sequences.len() as f64,
        })
    }

    /// Encoded row width: one-hot categoricals, (value, missing flag) per
    /// continuous column, then (value, is-first flag) for the index.
    pub fn row_width(&self) -> usize {
        self.variables.iter().map(Variable::input_width).sum::<usize>() + 2
    }

    pub fn context_width(&self) -> usize {
        self.context.iter().map(Variable::input_width).sum()
    }

    pub fn input_width(&self) -> usize {
        self.row_width() + self.context_width()
    }

    /// Variable heads, then (μ, σ) for the index, then the continue logit.
    pub fn output_width(&self) -> usize {
        self.variables.iter().map(Variable::output_width).sum::<usize>() + 3
    }

    /// Encodes the modeled variables of a row (index excluded).
    pub fn encode_row(&self, row: &Row) -> Result<Vec<f64>, CparError> {
        let mut out = Vec::with_capacity(self.row_width());
        for v in &self.variables {
            v.encode_into(&row[v.position()], &mut out)?;
        }
        Ok(out)
    }

    pub fn encode_context(&self, row: &Row) -> Result<Vec<f64>, CparError> {
        let mut out = Vec::with_capacity(self.context_width());
        for v in &self.context {
            v.encode_into(&row[v.position()], &mut out)?;
        }
        Ok(out)
    }

    pub fn targets(&self, row: &Row) -> Result<Vec<Target>, CparError> {
        self.variables
            .iter()
            .map(|v| {
                let cell = &row[v.position()];
                Ok(match v {
                    Variable::Categorical { column, vocabulary, .. } => {
                        Target::Category(category_index(column, vocabulary, cell)?)
                    }
                    Variable::Continuous { column, scale, .. } => match cell {
                        CellValue::Missing => Target::Value(None),
                        CellValue::Number(x) => Target::Value(Some(scale.standardize(*x))),
                        other => return Err(CparError::BadCell(column.clone(), format!("{other:?}"))),
                    },
                })
            })
            .collect()
    }

    pub fn encode_sequence(&self, rows: &[Row]) -> Result<EncodedSequence, CparError> {
        let mut inputs = Vec::with_capacity(rows.len());
        let mut targets = Vec::with_capacity(rows.len());
        let mut gaps = Vec::with_capacity(rows.len());
        let mut prev: Option<f64> = None;
        for row in rows {
            let t = row[self.index_position]
                .as_datetime()
                .ok_or(CparError::NoSequenceIndex)?;
            let m = minutes(&t);
            let g = match prev {
                None => self.start.standardize(m),
                Some(p) => self.gap.standardize((m - p).max(0.0).ln_1p()),
            };
            let mut input = self.encode_row(row)?;
            input.extend([g, if prev.is_none() { 1.0 } else { 0.0 }]);
            inputs.push(input);
            targets.push(self.targets(row)?);
            gaps.push(g);
            prev = Some(m);
        }
        let context = match rows.first() {
            Some(r) => self.encode_context(r)?,
            None => vec![0.0; self.context_width()],
        };
        Ok(EncodedSequence {
            inputs,
            targets,
            gaps,
            context,
        })
    }
}
