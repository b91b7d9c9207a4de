use std::collections::{BTreeSet, HashSet};
use std::io::Write;
use std::path::Path;

use super::{argmax, Column, ColumnKind, DataError, Dataset, TableSchema};
use crate::diffcalc::Array;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvOptions {
    pub delimiter: u8,
    /// Columns removed before schema inference or matching.
    pub drop: Vec<String>,
    /// Trim header names and replace inner spaces by underscores.
    pub normalize_headers: bool,
    /// A non-series numeric column with all-integral values and at most
    /// this many distinct values is inferred as integer.
    pub max_integer_support: usize,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            drop: Vec::new(),
            normalize_headers: true,
            max_integer_support: 32,
        }
    }
}

struct HeaderColumn {
    name: String,
    /// Field positions, one per series step or a single field.
    fields: Vec<usize>,
    series: bool,
}

fn split_series(label: &str) -> Option<(&str, usize)> {
    let open = label.find('[')?;
    let idx = label.strip_suffix(']')?[open + 1..].parse().ok()?;
    Some((&label[..open], idx))
}

fn group_header(labels: &[String], drop: &HashSet<&str>) -> Result<Vec<HeaderColumn>, DataError> {
    let mut out: Vec<HeaderColumn> = Vec::new();
    for (pos, label) in labels.iter().enumerate() {
        let (name, step) = match split_series(label) {
            Some((n, t)) => (n, Some(t)),
            None => (label.as_str(), None),
        };
        if drop.contains(name) || drop.contains(label.as_str()) {
            continue;
        }
        match (out.last_mut(), step) {
            (Some(last), Some(t)) if last.series && last.name == name => {
                if t != last.fields.len() {
                    return Err(DataError::Csv(format!(
                        "series `{name}` expected step {} but found {t}",
                        last.fields.len()
                    )));
                }
                last.fields.push(pos);
            }
            _ => {
                if out.iter().any(|c| c.name == name) {
                    return Err(DataError::DuplicateColumn(name.to_string()));
                }
                if step.is_some_and(|t| t != 0) {
                    return Err(DataError::Csv(format!("series `{name}` must start at step 0")));
                }
                out.push(HeaderColumn {
                    name: name.to_string(),
                    fields: vec![pos],
                    series: step.is_some(),
                });
            }
        }
    }
    Ok(out)
}

fn parse_number(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn infer_column(hc: &HeaderColumn, records: &[csv::StringRecord], opts: &CsvOptions) -> Column {
    let cells = records
        .iter()
        .flat_map(|r| hc.fields.iter().filter_map(move |&p| r.get(p)));
    let mut total = 0usize;
    let mut numeric = Vec::new();
    let mut strings = BTreeSet::new();
    for c in cells {
        total += 1;
        match parse_number(c) {
            Some(v) => numeric.push(v),
            None => {
                let s = c.trim();
                if !s.is_empty() {
                    strings.insert(s.to_string());
                }
            }
        }
    }
    if !hc.series && numeric.len() * 2 < total {
        return Column::categorical(hc.name.clone(), strings.into_iter().collect());
    }
    let integral = !numeric.is_empty() && numeric.iter().all(|v| v.fract() == 0.0);
    let kind = if integral
        && (hc.series || {
            let distinct: BTreeSet<i64> = numeric.iter().map(|v| *v as i64).collect();
            distinct.len() <= opts.max_integer_support
        }) {
        ColumnKind::Integer
    } else {
        ColumnKind::Real
    };
    if hc.series {
        Column::series(hc.name.clone(), kind, hc.fields.len())
    } else {
        Column {
            name: hc.name.clone(),
            kind,
            series_len: None,
        }
    }
}

fn check_against_schema(header: &[HeaderColumn], schema: &TableSchema) -> Result<(), DataError> {
    if header.len() != schema.columns.len() {
        return Err(DataError::ColumnCountMismatch {
            expected: schema.columns.len(),
            got: header.len(),
        });
    }
    for (h, c) in header.iter().zip(&schema.columns) {
        let width = if c.series_len.is_some() { c.width() } else { 1 };
        if h.name != c.name || h.fields.len() != width || h.series != c.series_len.is_some() {
            return Err(DataError::HeaderMismatch {
                expected: c.name.clone(),
                got: h.name.clone(),
            });
        }
    }
    Ok(())
}

/// Parse one record into flat components; `Ok(false)` marks a malformed row.
fn parse_row(
    record: &csv::StringRecord,
    header: &[HeaderColumn],
    schema: &TableSchema,
    out: &mut Vec<f64>,
) -> Result<bool, DataError> {
    let start = out.len();
    for (h, c) in header.iter().zip(&schema.columns) {
        match &c.kind {
            ColumnKind::Categorical { vocabulary } => {
                let cell = record.get(h.fields[0]).unwrap_or("").trim();
                let k = vocabulary.iter().position(|v| v == cell).ok_or_else(|| {
                    DataError::UnseenCategory {
                        column: c.name.clone(),
                        value: cell.to_string(),
                    }
                })?;
                out.extend((0..vocabulary.len()).map(|j| if j == k { 1.0 } else { 0.0 }));
            }
            kind => {
                for &p in &h.fields {
                    let v = record.get(p).and_then(parse_number);
                    match v {
                        Some(v) if !(matches!(kind, ColumnKind::Integer) && v.fract() != 0.0) => {
                            out.push(v)
                        }
                        _ => {
                            out.truncate(start);
                            return Ok(false);
                        }
                    }
                }
            }
        }
    }
    Ok(true)
}

/// Read a CSV with a header row. Without a schema one is inferred: numeric
/// columns become real (or integer when integral with small support),
/// mostly non-numeric columns become categorical with a sorted vocabulary,
/// and `name[t]` headers form series columns. Rows with a wrong field
/// count or unparseable numeric cells are excluded and counted in
/// [`Dataset::rejected`].
pub fn ingest_csv(path: impl AsRef<Path>, schema: Option<&TableSchema>, opts: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .flexible(true)
        .from_reader(file);
    let labels: Vec<String> = reader
        .headers()
        .map_err(|e| DataError::Csv(e.to_string()))?
        .iter()
        .map(|h| {
            if opts.normalize_headers {
                h.trim().split_whitespace().collect::<Vec<_>>().join("_")
            } else {
                h.to_string()
            }
        })
        .collect();
    let mut records = Vec::new();
    let mut rejected = 0;
    for rec in reader.records() {
        match rec {
            Ok(r) if r.len() == labels.len() => records.push(r),
            Ok(_) => rejected += 1,
            Err(e) => return Err(DataError::Csv(e.to_string()).into()),
        }
    }
    if records.is_empty() {
        return Err(DataError::EmptyFile.into());
    }
    let drop: HashSet<&str> = opts.drop.iter().map(String::as_str).collect();
    let header = group_header(&labels, &drop)?;
    let schema = match schema {
        Some(s) => {
            check_against_schema(&header, s)?;
            s.clone()
        }
        None => TableSchema::new(header.iter().map(|h| infer_column(h, &records, opts)).collect())?,
    };
    let mut data = Vec::with_capacity(records.len() * schema.width());
    let mut kept = 0;
    for r in &records {
        if parse_row(r, &header, &schema, &mut data)? {
            kept += 1;
        } else {
            rejected += 1;
        }
    }
    if kept == 0 {
        return Err(DataError::EmptyFile.into());
    }
    let rows = Array::matrix(kept, schema.width(), data).map_err(Error::from)?;
    let mut ds = Dataset::new(schema, rows)?;
    ds.rejected = rejected;
    Ok(ds)
}

fn header_labels(schema: &TableSchema) -> Vec<String> {
    let mut out = Vec::new();
    for c in &schema.columns {
        match (c.vocabulary(), c.series_len) {
            (None, Some(h)) => out.extend((0..h).map(|t| format!("{}[{t}]", c.name))),
            _ => out.push(c.name.clone()),
        }
    }
    out
}

/// Write rows in original units (flat layout) as CSV. One-hot blocks are
/// written as the argmax category, integer components without a fraction.
/// `extra` appends numeric columns such as per-sample diagnostics.
pub fn write_csv(
    path: impl AsRef<Path>,
    schema: &TableSchema,
    rows: &Array<f64>,
    extra: &[(&str, &[f64])],
) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = std::io::BufWriter::new(file);
    write_csv_to(&mut buf, schema, rows, extra)?;
    buf.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn write_csv_to<W: Write>(
    w: W,
    schema: &TableSchema,
    rows: &Array<f64>,
    extra: &[(&str, &[f64])],
) -> Result<()> {
    if rows.cols() != schema.width() {
        return Err(DataError::WidthMismatch {
            expected: schema.width(),
            got: rows.cols(),
        }
        .into());
    }
    for (name, col) in extra {
        if col.len() != rows.rows() {
            return Err(DataError::Csv(format!("extra column `{name}` has {} values", col.len())).into());
        }
    }
    let csv_err = |e: csv::Error| Error::from(DataError::Csv(e.to_string()));
    let mut writer = csv::Writer::from_writer(w);
    let mut header = header_labels(schema);
    header.extend(extra.iter().map(|(n, _)| n.to_string()));
    writer.write_record(&header).map_err(csv_err)?;
    let mut fields: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..rows.rows() {
        fields.clear();
        let row = rows.row_slice(i);
        let mut j = 0;
        for c in &schema.columns {
            let w = c.width();
            match &c.kind {
                ColumnKind::Categorical { vocabulary } => {
                    fields.push(vocabulary[argmax(&row[j..j + w])].clone())
                }
                ColumnKind::Integer => fields.extend(row[j..j + w].iter().map(|v| format!("{}", v.round() as i64))),
                ColumnKind::Real => fields.extend(row[j..j + w].iter().map(|v| format!("{v}"))),
            }
            j += w;
        }
        fields.extend(extra.iter().map(|(_, col)| format!("{}", col[i])));
        writer.write_record(&fields).map_err(csv_err)?;
    }
    writer.flush().map_err(|e| DataError::Csv(e.to_string()))?;
    Ok(())
}
