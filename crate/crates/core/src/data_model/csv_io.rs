use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDateTime;

use super::{CellValue, ColumnKind, DataError, Row, SequenceDataset, TableMetadata};

const DATETIME_FORMAT: &str = "%Y-%m-%d %H:%M";

pub fn format_datetime(t: &NaiveDateTime) -> String {
    t.format(DATETIME_FORMAT).to_string()
}

pub fn parse_datetime(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, DATETIME_FORMAT).ok()
}

/// Reads a CSV whose header matches `metadata` column-for-column.
///
/// Cells are typed by column kind: categorical and key columns keep the raw
/// text, continuous columns parse as numbers, the datetime index parses as
/// `YYYY-MM-DD HH:MM`. An empty field is a missing cell.
pub fn read_csv(path: impl AsRef<Path>, metadata: &TableMetadata) -> Result<SequenceDataset, DataError> {
    let file = File::open(path.as_ref())?;
    read_csv_from_reader(BufReader::new(file), metadata)
}

pub fn read_csv_from_reader<R: Read>(
    reader: R,
    metadata: &TableMetadata,
) -> Result<SequenceDataset, DataError> {
    metadata.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let expected: Vec<String> = metadata.columns.iter().map(|c| c.name.clone()).collect();
    if header != expected {
        if let Some(missing) = expected.iter().find(|n| !header.contains(n)) {
            return Err(DataError::MissingColumn(missing.clone()));
        }
        return Err(DataError::HeaderMismatch {
            expected,
            found: header,
        });
    }

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != metadata.columns.len() {
            return Err(DataError::RowArity {
                line,
                expected: metadata.columns.len(),
                found: record.len(),
            });
        }
        let row = record
            .iter()
            .zip(&metadata.columns)
            .map(|(field, spec)| parse_cell(field, spec, line))
            .collect::<Result<Row, _>>()?;
        rows.push(row);
    }
    let dataset = SequenceDataset::from_rows(metadata.clone(), rows)?;
    dataset.check_index_order()?;
    Ok(dataset)
}

fn parse_cell(field: &str, spec: &super::ColumnSpec, line: u64) -> Result<CellValue, DataError> {
    if field.is_empty() {
        if spec.allows_missing {
            return Ok(CellValue::Missing);
        }
        return Err(DataError::MissingNotAllowed {
            line,
            column: spec.name.clone(),
        });
    }
    let bad = |what| DataError::BadCell {
        line,
        column: spec.name.clone(),
        value: field.to_string(),
        what,
    };
    match spec.kind {
        ColumnKind::Categorical | ColumnKind::SequenceKey => Ok(CellValue::Category(field.to_string())),
        ColumnKind::Continuous => field
            .parse::<f64>()
            .map(CellValue::Number)
            .map_err(|_| bad("number")),
        ColumnKind::SequenceIndexDatetime => parse_datetime(field)
            .map(CellValue::Datetime)
            .ok_or_else(|| bad("datetime")),
    }
}

fn format_cell(cell: &CellValue) -> String {
    match cell {
        CellValue::Category(s) => s.clone(),
        // `Display` for f64 prints the shortest string that parses back to
        // the same value.
        CellValue::Number(x) => format!("{x}"),
        CellValue::Datetime(t) => format_datetime(t),
        CellValue::Missing => String::new(),
    }
}

pub fn write_csv(dataset: &SequenceDataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    write_csv_to_writer(dataset, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_csv_to_writer<W: Write>(dataset: &SequenceDataset, writer: W) -> Result<(), DataError> {
    let mut wtr = csv::WriterBuilder::new().from_writer(writer);
    wtr.write_record(dataset.metadata.columns.iter().map(|c| c.name.as_str()))?;
    for row in dataset.rows() {
        wtr.write_record(row.iter().map(format_cell))?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{generate_fixture_dataset, ColumnSpec};

    const HEADER: &str = "User,Card,Year,Month,Day,Time,Amount,Use Chip,Merchant Name,Merchant City,Merchant State,Zip,MCC,Errors?,Is Fraud?\n";

    #[test]
    fn empty_file_with_header_has_no_sequences() {
        let d = read_csv_from_reader(HEADER.as_bytes(), &TableMetadata::transactions()).unwrap();
        assert!(d.sequences.is_empty());
    }

    #[test]
    fn single_row() {
        let text = format!(
            "{HEADER}0,0,2002,9,1,06:21,$134.09,Swipe Transaction,3527213246127876953,La Verne,CA,91750.0,5300,,No\n"
        );
        let d = read_csv_from_reader(text.as_bytes(), &TableMetadata::transactions()).unwrap();
        assert_eq!(d.sequences.len(), 1);
        assert_eq!(d.sequences[0].len(), 1);
        assert_eq!(d.sequences[0].rows[0][13], CellValue::Missing);
        assert_eq!(d.sequences[0].rows[0][6], CellValue::category("$134.09"));
    }

    #[test]
    fn arity_error_reports_line() {
        let text = format!("{HEADER}0,0,2002\n");
        match read_csv_from_reader(text.as_bytes(), &TableMetadata::transactions()) {
            Err(DataError::RowArity { line, found, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(found, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_named() {
        let text = "User,Card\n";
        match read_csv_from_reader(text.as_bytes(), &TableMetadata::transactions()) {
            Err(DataError::MissingColumn(c)) => assert_eq!(c, "Year"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_not_allowed_outside_nullable_columns() {
        let text = format!("{HEADER}0,,2002,9,1,06:21,$1.00,Swipe Transaction,1,X,CA,1.0,5300,,No\n");
        assert!(matches!(
            read_csv_from_reader(text.as_bytes(), &TableMetadata::transactions()),
            Err(DataError::MissingNotAllowed { line: 2, .. })
        ));
    }

    #[test]
    fn three_users_with_reference_lengths() {
        let mut text = String::from(HEADER);
        for (user, len) in [("214", 2540), ("882", 2676), ("1798", 2630)] {
            for i in 0..len {
                text.push_str(&format!(
                    "{user},0,2010,1,1,00:00,${}.00,Chip Transaction,7,Town,CA,90000.0,5411,,No\n",
                    i % 50
                ));
            }
        }
        let d = read_csv_from_reader(text.as_bytes(), &TableMetadata::transactions()).unwrap();
        let lengths: Vec<_> = d.sequences.iter().map(|s| s.len()).collect();
        assert_eq!(lengths, vec![2540, 2676, 2630]);
    }

    #[test]
    fn typed_columns_round_trip() {
        let meta = TableMetadata {
            columns: vec![
                ColumnSpec::new("User", ColumnKind::SequenceKey),
                ColumnSpec::new("Datetime", ColumnKind::SequenceIndexDatetime),
                ColumnSpec::new("Amount", ColumnKind::Continuous).nullable(),
            ],
            sequence_key: "User".into(),
            sequence_index: Some("Datetime".into()),
        };
        let text = "User,Datetime,Amount\nu,2015-07-04 13:05,0.1\nu,2015-07-04 14:35,\n";
        let d = read_csv_from_reader(text.as_bytes(), &meta).unwrap();
        assert_eq!(d.sequences[0].rows[0][2], CellValue::Number(0.1));
        assert!(d.sequences[0].rows[1][2].is_missing());
        let mut buf = Vec::new();
        write_csv_to_writer(&d, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
    }

    #[test]
    fn backwards_index_is_rejected() {
        let meta = TableMetadata {
            columns: vec![
                ColumnSpec::new("User", ColumnKind::SequenceKey),
                ColumnSpec::new("Datetime", ColumnKind::SequenceIndexDatetime),
            ],
            sequence_key: "User".into(),
            sequence_index: Some("Datetime".into()),
        };
        let text = "User,Datetime\nu,2015-07-04 13:05\nu,2015-07-04 12:00\n";
        assert!(matches!(
            read_csv_from_reader(text.as_bytes(), &meta),
            Err(DataError::UnsortedSequence { step: 1, .. })
        ));
    }

    #[test]
    fn fixture_round_trips_through_csv() {
        let d = generate_fixture_dataset(7, 3, 40);
        let mut buf = Vec::new();
        write_csv_to_writer(&d, &mut buf).unwrap();
        let back = read_csv_from_reader(buf.as_slice(), &d.metadata).unwrap();
        assert_eq!(back, d);
    }
}
