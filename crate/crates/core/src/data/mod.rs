//! Tables, schemas, normalization and the data sources used in experiments.
//!
//! Every row lives in a flat layout of *components*: a real or integer
//! column is one component, a series column of length `H` is `H`
//! components, and a categorical column is one component per vocabulary
//! entry (one-hot). Rows in original units and rows in model space share
//! this layout; [`Normalization`] maps between them.

mod csvio;
mod esirs;
mod synthetic;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcalc::Array;

pub use csvio::{ingest_csv, write_csv, CsvOptions};
pub use esirs::{esirs_schema, esirs_simulate, ESIRSParams};
pub use synthetic::{gaussian_mixture_1d, synthetic_wine, wine_schema, WINE_COLUMNS};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("file contains no data rows")]
    EmptyFile,
    #[error("header has {got} columns, schema expects {expected}")]
    ColumnCountMismatch { expected: usize, got: usize },
    #[error("header column `{got}` does not match schema column `{expected}`")]
    HeaderMismatch { expected: String, got: String },
    #[error("category `{value}` is not in the vocabulary of `{column}`")]
    UnseenCategory { column: String, value: String },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("categorical column `{0}` has an empty vocabulary")]
    EmptyVocabulary(String),
    #[error("row width {got} does not match schema width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("csv: {0}")]
    Csv(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Real,
    Integer,
    Categorical { vocabulary: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
    /// `Some(H)` for a series column of `H` time steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series_len: Option<usize>,
}

impl Column {
    pub fn real(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Real,
            series_len: None,
        }
    }

    pub fn integer(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Integer,
            series_len: None,
        }
    }

    pub fn categorical(name: impl Into<String>, vocabulary: Vec<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical { vocabulary },
            series_len: None,
        }
    }

    pub fn series(name: impl Into<String>, kind: ColumnKind, len: usize) -> Self {
        Self {
            name: name.into(),
            kind,
            series_len: Some(len),
        }
    }

    pub fn width(&self) -> usize {
        match &self.kind {
            ColumnKind::Categorical { vocabulary } => vocabulary.len(),
            _ => self.series_len.unwrap_or(1),
        }
    }

    pub fn vocabulary(&self) -> Option<&[String]> {
        match &self.kind {
            ColumnKind::Categorical { vocabulary } => Some(vocabulary),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentKind {
    Real,
    Integer,
    OneHot { category: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    pub column: usize,
    pub kind: ComponentKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub columns: Vec<Column>,
}

impl TableSchema {
    pub fn new(columns: Vec<Column>) -> Result<Self, DataError> {
        let schema = Self { columns };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(DataError::DuplicateColumn(c.name.clone()));
            }
            if let ColumnKind::Categorical { vocabulary } = &c.kind {
                if vocabulary.is_empty() {
                    return Err(DataError::EmptyVocabulary(c.name.clone()));
                }
                if c.series_len.is_some() {
                    return Err(DataError::InvalidParams(format!(
                        "categorical column `{}` cannot be a series",
                        c.name
                    )));
                }
            }
            if c.series_len == Some(0) {
                return Err(DataError::InvalidParams(format!(
                    "series column `{}` has length 0",
                    c.name
                )));
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.columns.iter().map(Column::width).sum()
    }

    pub fn column(&self, name: &str) -> Option<(usize, &Column)> {
        self.columns.iter().enumerate().find(|(_, c)| c.name == name)
    }

    /// First flat component of column `index`.
    pub fn offset_of(&self, index: usize) -> usize {
        self.columns[..index].iter().map(Column::width).sum()
    }

    pub fn components(&self) -> Vec<Component> {
        let mut out = Vec::with_capacity(self.width());
        for (ci, c) in self.columns.iter().enumerate() {
            match &c.kind {
                ColumnKind::Categorical { vocabulary } => {
                    out.extend((0..vocabulary.len()).map(|k| Component {
                        column: ci,
                        kind: ComponentKind::OneHot { category: k },
                    }))
                }
                ColumnKind::Real => out.extend(std::iter::repeat_n(
                    Component {
                        column: ci,
                        kind: ComponentKind::Real,
                    },
                    c.width(),
                )),
                ColumnKind::Integer => out.extend(std::iter::repeat_n(
                    Component {
                        column: ci,
                        kind: ComponentKind::Integer,
                    },
                    c.width(),
                )),
            }
        }
        out
    }

    /// Header labels of the flat layout: `name`, `name[t]` for series and
    /// `name:category` for one-hot components.
    pub fn component_labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.width());
        for c in &self.columns {
            match (&c.kind, c.series_len) {
                (ColumnKind::Categorical { vocabulary }, _) => {
                    out.extend(vocabulary.iter().map(|v| format!("{}:{v}", c.name)))
                }
                (_, Some(h)) => out.extend((0..h).map(|t| format!("{}[{t}]", c.name))),
                (_, None) => out.push(c.name.clone()),
            }
        }
        out
    }

    /// Flat component of a scalar numeric column.
    pub fn scalar_component(&self, name: &str) -> Option<usize> {
        let (i, c) = self.column(name)?;
        match (&c.kind, c.series_len) {
            (ColumnKind::Categorical { .. }, _) | (_, Some(_)) => None,
            _ => Some(self.offset_of(i)),
        }
    }

    /// Flat component of `name[t]`; `Err(len)` when `t` is out of range.
    pub fn series_component(&self, name: &str, t: i64) -> Option<Result<usize, usize>> {
        let (i, c) = self.column(name)?;
        let h = c.series_len?;
        if matches!(c.kind, ColumnKind::Categorical { .. }) {
            return None;
        }
        if t < 0 || t as usize >= h {
            return Some(Err(h));
        }
        Some(Ok(self.offset_of(i) + t as usize))
    }

    pub fn onehot_component(&self, name: &str, category: &str) -> Result<usize, DataError> {
        let (i, c) = self
            .column(name)
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))?;
        let vocab = c
            .vocabulary()
            .ok_or_else(|| DataError::UnknownColumn(format!("{name} (not categorical)")))?;
        let k = vocab
            .iter()
            .position(|v| v == category)
            .ok_or_else(|| DataError::UnseenCategory {
                column: name.to_string(),
                value: category.to_string(),
            })?;
        Ok(self.offset_of(i) + k)
    }

    pub fn load_json(path: impl AsRef<Path>) -> crate::Result<Self> {
        let text =
            std::fs::read_to_string(path.as_ref()).map_err(|e| crate::Error::io(path.as_ref(), e))?;
        let schema: Self = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> crate::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path.as_ref(), text).map_err(|e| crate::Error::io(path.as_ref(), e))
    }
}

/// Rows in original units over the flat component layout; categorical
/// columns are stored as exact one-hot blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: TableSchema,
    pub rows: Array<f64>,
    /// Input rows excluded during ingestion.
    pub rejected: usize,
}

impl Dataset {
    pub fn new(schema: TableSchema, rows: Array<f64>) -> Result<Self, DataError> {
        schema.validate()?;
        if rows.cols() != schema.width() {
            return Err(DataError::WidthMismatch {
                expected: schema.width(),
                got: rows.cols(),
            });
        }
        Ok(Self {
            schema,
            rows,
            rejected: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }

    /// Keep the given columns; an unknown name is an error.
    pub fn select_columns(&self, names: &[String]) -> Result<Self, DataError> {
        let mut cols = Vec::new();
        let mut picks = Vec::new();
        for n in names {
            let (i, c) = self
                .schema
                .column(n)
                .ok_or_else(|| DataError::UnknownColumn(n.clone()))?;
            let off = self.schema.offset_of(i);
            picks.extend(off..off + c.width());
            cols.push(c.clone());
        }
        let rows = Array::from_fn(self.len(), picks.len(), |r, j| self.rows.get(r, picks[j]));
        Ok(Self {
            schema: TableSchema::new(cols)?,
            rows,
            rejected: self.rejected,
        })
    }

    /// First `n` rows and the rest.
    pub fn split_at(&self, n: usize) -> (Self, Self) {
        let n = n.min(self.len());
        let w = self.rows.cols();
        let head = Array::matrix(n, w, self.rows.data()[..n * w].to_vec()).expect("sized");
        let tail = Array::matrix(self.len() - n, w, self.rows.data()[n * w..].to_vec()).expect("sized");
        (
            Self {
                schema: self.schema.clone(),
                rows: head,
                rejected: self.rejected,
            },
            Self {
                schema: self.schema.clone(),
                rows: tail,
                rejected: 0,
            },
        )
    }
}

pub const STD_FLOOR: f64 = 1e-8;

/// Per-component affine standardization `y = (x − mean)/std`. One-hot
/// components keep `mean = 0, std = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    pub fn fit(dataset: &Dataset) -> Self {
        let comps = dataset.schema.components();
        let n = dataset.len().max(1) as f64;
        let w = comps.len();
        let mut mean = vec![0.0; w];
        let mut std = vec![1.0; w];
        for (j, comp) in comps.iter().enumerate() {
            if matches!(comp.kind, ComponentKind::OneHot { .. }) {
                continue;
            }
            let m = (0..dataset.len()).map(|i| dataset.rows.get(i, j)).sum::<f64>() / n;
            let v = (0..dataset.len())
                .map(|i| (dataset.rows.get(i, j) - m).powi(2))
                .sum::<f64>()
                / n;
            mean[j] = m;
            std[j] = v.sqrt().max(STD_FLOOR);
        }
        Self { mean, std }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, x: &Array<f64>) -> Result<(), DataError> {
        if x.cols() != self.width() {
            return Err(DataError::WidthMismatch {
                expected: self.width(),
                got: x.cols(),
            });
        }
        Ok(())
    }

    /// Original units → model space.
    pub fn forward(&self, x: &Array<f64>) -> Result<Array<f64>, DataError> {
        self.check(x)?;
        let w = self.width();
        Ok(Array::from_fn(x.rows(), w, |i, j| (x.get(i, j) - self.mean[j]) / self.std[j]))
    }

    /// Model space → original units (no rounding or argmax).
    pub fn inverse(&self, y: &Array<f64>) -> Result<Array<f64>, DataError> {
        self.check(y)?;
        let w = self.width();
        Ok(Array::from_fn(y.rows(), w, |i, j| self.mean[j] + self.std[j] * y.get(i, j)))
    }

    /// Half-width of uniform dequantization noise in model space for each
    /// component: `0.5/std` on integer components, 0 elsewhere.
    pub fn dequantization(&self, schema: &TableSchema) -> Vec<f64> {
        schema
            .components()
            .iter()
            .zip(&self.std)
            .map(|(c, s)| match c.kind {
                ComponentKind::Integer => 0.5 / s,
                _ => 0.0,
            })
            .collect()
    }
}

/// Standardize a dataset into model space.
pub fn encode(dataset: &Dataset, norm: &Normalization) -> Result<Array<f64>, DataError> {
    norm.forward(&dataset.rows)
}

/// Map model-space rows back to original units: de-standardize, round
/// integer components and replace each one-hot block by its argmax.
pub fn decode(y: &Array<f64>, schema: &TableSchema, norm: &Normalization) -> Result<Array<f64>, DataError> {
    if y.cols() != schema.width() {
        return Err(DataError::WidthMismatch {
            expected: schema.width(),
            got: y.cols(),
        });
    }
    let mut x = norm.inverse(y)?;
    let comps = schema.components();
    for i in 0..x.rows() {
        let row = x.row_slice_mut(i);
        let mut j = 0;
        while j < comps.len() {
            match comps[j].kind {
                ComponentKind::Real => j += 1,
                ComponentKind::Integer => {
                    row[j] = row[j].round();
                    j += 1;
                }
                ComponentKind::OneHot { .. } => {
                    let w = schema.columns[comps[j].column].width();
                    let block = &mut row[j..j + w];
                    let best = argmax(block);
                    for (k, v) in block.iter_mut().enumerate() {
                        *v = if k == best { 1.0 } else { 0.0 };
                    }
                    j += w;
                }
            }
        }
    }
    Ok(x)
}

/// [`decode`] for rows holding `instances` concatenated records.
pub fn decode_instances(
    y: &Array<f64>,
    instances: usize,
    schema: &TableSchema,
    norm: &Normalization,
) -> Result<Array<f64>, DataError> {
    let d = schema.width();
    if instances == 0 || y.cols() != instances * d {
        return Err(DataError::WidthMismatch {
            expected: instances * d,
            got: y.cols(),
        });
    }
    let rows = y.rows();
    let flat = y.clone().reshape(rows * instances, d).expect("width checked");
    let out = decode(&flat, schema, norm)?;
    Ok(out.reshape(rows, instances * d).expect("same size"))
}

/// Index of the largest value, ties to the first; NaN never wins.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v > values[best] || values[best].is_nan() {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn mixed_schema() -> TableSchema {
        TableSchema::new(vec![
            Column::real("r"),
            Column::categorical("c", vec!["a".into(), "b".into(), "c".into()]),
            Column::integer("n"),
            Column::series("S", ColumnKind::Integer, 3),
        ])
        .unwrap()
    }

    #[test]
    fn layout_and_labels() {
        let s = mixed_schema();
        assert_eq!(s.width(), 8);
        assert_eq!(
            s.component_labels(),
            vec!["r", "c:a", "c:b", "c:c", "n", "S[0]", "S[1]", "S[2]"]
        );
        assert_eq!(s.onehot_component("c", "b").unwrap(), 2);
        assert_eq!(s.scalar_component("n"), Some(4));
        assert_eq!(s.series_component("S", 2), Some(Ok(7)));
        assert_eq!(s.series_component("S", 3), Some(Err(3)));
        assert!(matches!(
            s.onehot_component("c", "z"),
            Err(DataError::UnseenCategory { .. })
        ));
    }

    #[test]
    fn schema_rejects_duplicates_and_empty_vocab() {
        assert!(TableSchema::new(vec![Column::real("a"), Column::real("a")]).is_err());
        assert!(TableSchema::new(vec![Column::categorical("a", vec![])]).is_err());
    }

    #[test]
    fn zscore_example() {
        let schema = TableSchema::new(vec![Column::real("v")]).unwrap();
        let norm = Normalization {
            mean: vec![5.0],
            std: vec![2.0],
        };
        let ds = Dataset::new(schema, Array::column(vec![9.0])).unwrap();
        assert_eq!(encode(&ds, &norm).unwrap().data(), &[2.0]);
    }

    #[test]
    fn decode_examples() {
        let schema = TableSchema::new(vec![
            Column::categorical("c", vec!["a".into(), "b".into(), "c".into()]),
            Column::integer("n"),
        ])
        .unwrap();
        let norm = Normalization::identity(4);
        let y = Array::matrix(2, 4, vec![0.1, 0.7, 0.2, 29.6, 1.0, 0.0, 0.0, 3.0]).unwrap();
        let x = decode(&y, &schema, &norm).unwrap();
        assert_eq!(x.row_slice(0), &[0.0, 1.0, 0.0, 30.0]);
        assert_eq!(x.row_slice(1), &[1.0, 0.0, 0.0, 3.0]);
    }

    #[test]
    fn round_trip_on_random_rows() {
        let schema = mixed_schema();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let rows = Array::from_fn(1000, 8, |_, _| 0.0);
        let mut rows = rows;
        for i in 0..1000 {
            let r = rows.row_slice_mut(i);
            r[0] = rng.random_range(-1e3..1e3);
            r[1 + rng.random_range(0..3)] = 1.0;
            r[4] = rng.random_range(0..50) as f64;
            for t in 0..3 {
                r[5 + t] = rng.random_range(0..100) as f64;
            }
        }
        let ds = Dataset::new(schema.clone(), rows.clone()).unwrap();
        let norm = Normalization::fit(&ds);
        let y = encode(&ds, &norm).unwrap();
        for i in 0..1000 {
            assert!((y.row_slice(i)[1..4].iter().sum::<f64>() - 1.0).abs() == 0.0);
        }
        let back = norm.inverse(&y).unwrap();
        for (a, b) in back.data().iter().zip(rows.data()) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
        let dec = decode(&y, &schema, &norm).unwrap();
        for i in 0..1000 {
            let (a, b) = (dec.row_slice(i), rows.row_slice(i));
            assert!((a[0] - b[0]).abs() <= 1e-9 * b[0].abs().max(1.0));
            assert_eq!(&a[1..], &b[1..]);
        }
    }

    #[test]
    fn constant_column_uses_std_floor() {
        let schema = TableSchema::new(vec![Column::real("v")]).unwrap();
        let ds = Dataset::new(schema, Array::column(vec![3.0; 10])).unwrap();
        let n = Normalization::fit(&ds);
        assert_eq!(n.std[0], STD_FLOOR);
        assert_eq!(n.inverse(&n.forward(&ds.rows).unwrap()).unwrap().data(), ds.rows.data());
    }

    #[test]
    fn schema_json_round_trip() {
        let s = mixed_schema();
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<TableSchema>(&text).unwrap(), s);
    }
}
