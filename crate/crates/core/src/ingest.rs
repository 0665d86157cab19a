//! Delimited survey tables in, `Dataset` out.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{CategoricalColumn, Dataset};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::prepare::{ColumnMeta, ColumnSource, DesignMatrix, Term};
use crate::randmath::RngState;
use crate::scalar::Scalar;

pub const MAX_LEVELS: usize = 20;

/// Day columns of one error-prone component, day 1 first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentColumns {
    pub name: String,
    pub days: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateColumn {
    pub name: String,
    pub kind: CovariateKind,
}

/// Keep a row only when its `column` passes every bound that is set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowFilter {
    pub column: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equals: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub not_equals: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

impl RowFilter {
    fn keeps(&self, value: &str) -> bool {
        if self.equals.as_deref().is_some_and(|e| e != value) {
            return false;
        }
        if self.not_equals.as_deref().is_some_and(|e| e == value) {
            return false;
        }
        if self.min.is_some() || self.max.is_some() {
            let Ok(v) = value.trim().parse::<f64>() else {
                return false;
            };
            if self.min.is_some_and(|m| v < m) || self.max.is_some_and(|m| v > m) {
                return false;
            }
        }
        true
    }
}

fn default_missing() -> String {
    "NA".into()
}

fn default_delimiter() -> char {
    ','
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    pub outcome_column: String,
    pub replicate_columns: Vec<ComponentColumns>,
    #[serde(default)]
    pub covariate_columns: Vec<CovariateColumn>,
    /// Cells equal to this (or empty) are missing.
    #[serde(default = "default_missing")]
    pub missing_token: String,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    /// Exclusion rules applied before anything is parsed.
    #[serde(default)]
    pub filters: Vec<RowFilter>,
}

impl TableSchema {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicate_columns.is_empty() {
            return Err(Error::Config("schema needs at least one replicate component".into()));
        }
        let k = self.replicate_columns[0].days.len();
        if k == 0 || self.replicate_columns.iter().any(|c| c.days.len() != k) {
            return Err(Error::Config(
                "every component needs the same, non-zero number of day columns".into(),
            ));
        }
        if !self.delimiter.is_ascii() {
            return Err(Error::Config("delimiter must be a single ASCII character".into()));
        }
        Ok(())
    }

    pub fn days(&self) -> usize {
        self.replicate_columns[0].days.len()
    }

    /// Schema matching what [`write_table`] emits for `ds`.
    pub fn for_dataset<T: Scalar>(ds: &Dataset<T>) -> Self {
        let replicate_columns = ds
            .components
            .iter()
            .map(|c| ComponentColumns {
                name: c.clone(),
                days: (1..=ds.k()).map(|j| format!("{c}_day{j}")).collect(),
            })
            .collect();
        let covariate_columns = ds
            .z_names
            .iter()
            .map(|n| CovariateColumn {
                name: n.clone(),
                kind: CovariateKind::Continuous,
            })
            .chain(ds.categoricals.iter().map(|c| CovariateColumn {
                name: c.name.clone(),
                kind: CovariateKind::Categorical,
            }))
            .collect();
        Self {
            outcome_column: "y".into(),
            replicate_columns,
            covariate_columns,
            missing_token: default_missing(),
            delimiter: default_delimiter(),
            filters: Vec::new(),
        }
    }
}

/// A parsed table and what was left out of it.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTable<T: Scalar> {
    pub dataset: Dataset<T>,
    pub rows_read: usize,
    /// Rows removed by schema filters.
    pub dropped_filtered: usize,
    /// Rows missing the outcome, a covariate or a day-1 replicate.
    pub dropped_missing: usize,
}

fn parse_number<T: Scalar>(text: &str, row: usize, column: &str) -> Result<T> {
    T::from_str_radix(text.trim(), 10)
        .ok()
        .filter(|v: &T| v.is_finite())
        .ok_or_else(|| Error::Parse {
            row,
            column: column.to_string(),
            message: format!("`{text}` is not a finite number"),
        })
}

/// Reads `schema`'s columns from delimited text.
///
/// A later day counts as absent when any component is missing on it; its
/// stored values are zero and masked by `present`.
pub fn read_table<T: Scalar, R: Read>(reader: R, schema: &TableSchema) -> Result<LoadedTable<T>> {
    schema.validate()?;
    let mut csv = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .from_reader(reader);
    let header: Vec<String> = csv
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            column: String::new(),
            message: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let index: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let col = |name: &str| index.get(name).copied().ok_or_else(|| Error::SchemaMismatch(name.to_string()));

    let y_col = col(&schema.outcome_column)?;
    let day_cols: Vec<Vec<usize>> = schema
        .replicate_columns
        .iter()
        .map(|c| c.days.iter().map(|d| col(d)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let cov_cols: Vec<(usize, &CovariateColumn)> = schema
        .covariate_columns
        .iter()
        .map(|c| Ok((col(&c.name)?, c)))
        .collect::<Result<_>>()?;
    let filter_cols: Vec<usize> = schema.filters.iter().map(|f| col(&f.column)).collect::<Result<_>>()?;

    let (p, k) = (schema.replicate_columns.len(), schema.days());
    let continuous: Vec<usize> = cov_cols
        .iter()
        .filter(|(_, c)| c.kind == CovariateKind::Continuous)
        .map(|&(i, _)| i)
        .collect();
    let categorical: Vec<(usize, &CovariateColumn)> = cov_cols
        .iter()
        .filter(|(_, c)| c.kind == CovariateKind::Categorical)
        .copied()
        .collect();

    let missing = |s: &str| {
        let s = s.trim();
        s.is_empty() || s == schema.missing_token
    };
    let mut y = Vec::new();
    let mut x_star = Vec::new();
    let mut present = Vec::new();
    let mut z_values = Vec::new();
    let mut cat_values: Vec<Vec<String>> = vec![Vec::new(); categorical.len()];
    let (mut rows_read, mut dropped_filtered, mut dropped_missing) = (0, 0, 0);

    for (r, record) in csv.records().enumerate() {
        // 1-based, header is row 1
        let row = r + 2;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        rows_read += 1;
        if record.len() != header.len() {
            return Err(Error::Parse {
                row,
                column: String::new(),
                message: format!("{} fields, header has {}", record.len(), header.len()),
            });
        }
        let cell = |i: usize| &record[i];
        if schema.filters.iter().zip(&filter_cols).any(|(f, &i)| !f.keeps(cell(i))) {
            dropped_filtered += 1;
            continue;
        }
        let required = std::iter::once(y_col)
            .chain(cov_cols.iter().map(|&(i, _)| i))
            .chain(day_cols.iter().map(|d| d[0]));
        if required.into_iter().any(|i| missing(cell(i))) {
            dropped_missing += 1;
            continue;
        }
        y.push(parse_number::<T>(cell(y_col), row, &header[y_col])?);
        let day_present: Vec<bool> = (0..k)
            .map(|j| day_cols.iter().all(|d| !missing(cell(d[j]))))
            .collect();
        for d in &day_cols {
            for (j, &c) in d.iter().enumerate() {
                x_star.push(if day_present[j] {
                    parse_number::<T>(cell(c), row, &header[c])?
                } else {
                    T::zero()
                });
            }
        }
        present.extend_from_slice(&day_present);
        for &c in &continuous {
            z_values.push(parse_number::<T>(cell(c), row, &header[c])?);
        }
        for (values, &(c, _)) in cat_values.iter_mut().zip(&categorical) {
            values.push(cell(c).trim().to_string());
        }
    }

    let n = y.len();
    let mut ds = Dataset::new(y, x_star, p, k)?;
    ds.present = present;
    ds.components = schema.replicate_columns.iter().map(|c| c.name.clone()).collect();
    ds.z = Matrix::from_vec(n, continuous.len(), z_values);
    ds.z_names = continuous.iter().map(|&c| header[c].clone()).collect();
    ds.categoricals = categorical
        .iter()
        .zip(cat_values)
        .map(|(&(_, c), values)| CategoricalColumn {
            name: c.name.clone(),
            values,
        })
        .collect();
    ds.validate()?;
    Ok(LoadedTable {
        dataset: ds,
        rows_read,
        dropped_filtered,
        dropped_missing,
    })
}

pub fn load_table<T: Scalar>(path: &Path, schema: &TableSchema) -> Result<LoadedTable<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_table(file, schema).map_err(|e| match e {
        Error::Parse { row, column, message } => Error::Parse {
            row,
            column,
            message: format!("{message} (in {})", path.display()),
        },
        other => other,
    })
}

/// Writes `ds` in the layout described by `schema`; absent days become the
/// missing token. Reading it back with the same schema gives `ds` again,
/// apart from generator-only fields (usual intake, additive scale).
pub fn write_table<T: Scalar, W: Write>(ds: &Dataset<T>, schema: &TableSchema, writer: W) -> Result<()> {
    schema.validate()?;
    if schema.replicate_columns.len() != ds.p() || schema.days() != ds.k() {
        return Err(Error::Config(format!(
            "schema describes {} components × {} days, dataset has {} × {}",
            schema.replicate_columns.len(),
            schema.days(),
            ds.p(),
            ds.k()
        )));
    }
    let continuous: Vec<&str> = schema
        .covariate_columns
        .iter()
        .filter(|c| c.kind == CovariateKind::Continuous)
        .map(|c| c.name.as_str())
        .collect();
    let categorical: Vec<&str> = schema
        .covariate_columns
        .iter()
        .filter(|c| c.kind == CovariateKind::Categorical)
        .map(|c| c.name.as_str())
        .collect();
    if continuous.len() != ds.q() || categorical.len() != ds.categoricals.len() {
        return Err(Error::Config("schema covariates do not match the dataset".into()));
    }
    let mut out = csv::WriterBuilder::new()
        .delimiter(schema.delimiter as u8)
        .from_writer(writer);
    let mut header = vec![schema.outcome_column.clone()];
    for c in &schema.replicate_columns {
        header.extend(c.days.iter().cloned());
    }
    header.extend(continuous.iter().map(|s| s.to_string()));
    header.extend(categorical.iter().map(|s| s.to_string()));
    out.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for i in 0..ds.n() {
        record.clear();
        record.push(ds.y[i].to_string());
        for l in 0..ds.p() {
            for j in 0..ds.k() {
                record.push(if ds.is_present(i, j) {
                    ds.x(i, l, j).to_string()
                } else {
                    schema.missing_token.clone()
                });
            }
        }
        record.extend(ds.z.row(i).iter().map(|v| v.to_string()));
        record.extend(ds.categoricals.iter().map(|c| c.values[i].clone()));
        out.write_record(&record)?;
    }
    out.flush().map_err(|e| Error::io("<table>", e))?;
    Ok(())
}

/// Marks day `day` absent for a random `fraction` of individuals and zeroes
/// the masked values.
pub fn inject_missing_day<T: Scalar>(ds: &Dataset<T>, day: usize, fraction: f64, rng: RngState) -> Result<Dataset<T>> {
    if day == 0 || day >= ds.k() {
        return Err(Error::Config(format!("can only remove days 2..={}, got {}", ds.k(), day + 1)));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("missing fraction must lie in [0, 1], got {fraction}")));
    }
    let mut out = ds.clone();
    let mut rng = rng.rng();
    for i in 0..ds.n() {
        if rng.random::<f64>() < fraction {
            out.present[i * ds.k() + day] = false;
            for l in 0..ds.p() {
                out.set_x(i, l, day, T::zero());
            }
        }
    }
    Ok(out)
}

/// Reference-cell dummies, one term per factor; the first observed level
/// is the reference. Constant factors emit no columns and a warning.
pub fn encode_categoricals<T: Scalar>(columns: &[CategoricalColumn], rows: usize) -> Result<(DesignMatrix<T>, Vec<String>)> {
    let mut warnings = Vec::new();
    let mut values: Vec<Vec<T>> = Vec::new();
    let mut metas = Vec::new();
    let mut terms = Vec::new();
    for c in columns {
        if c.values.len() != rows {
            return Err(Error::LengthMismatch {
                left: c.values.len(),
                right: rows,
            });
        }
        let mut levels: Vec<&str> = Vec::new();
        for v in &c.values {
            if !levels.contains(&v.as_str()) {
                levels.push(v);
                if levels.len() > MAX_LEVELS {
                    let total = c.values.iter().collect::<std::collections::HashSet<_>>().len();
                    return Err(Error::TooManyLevels {
                        column: c.name.clone(),
                        levels: total,
                        limit: MAX_LEVELS,
                    });
                }
            }
        }
        if levels.len() < 2 {
            warnings.push(format!("categorical column `{}` is constant; no dummies emitted", c.name));
            continue;
        }
        let mut idx = Vec::new();
        for level in &levels[1..] {
            idx.push(metas.len());
            values.push(
                c.values
                    .iter()
                    .map(|v| if v == level { T::one() } else { T::zero() })
                    .collect(),
            );
            metas.push(ColumnMeta {
                name: format!("{}={}", c.name, level),
                source: ColumnSource::Dummy {
                    factor: c.name.clone(),
                    level: level.to_string(),
                },
            });
        }
        terms.push(Term {
            name: c.name.clone(),
            columns: idx,
            order: 1,
        });
    }
    let matrix = Matrix::from_fn(rows, values.len(), |i, j| values[j][i]);
    let mut dm = DesignMatrix::new(matrix, metas);
    dm.terms = terms;
    Ok((dm, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> TableSchema {
        serde_json::from_str(
            r#"{"outcome_column": "bp",
                "replicate_columns": [{"name": "sodium", "days": ["na1", "na2"]}],
                "covariate_columns": [{"name": "age", "kind": "continuous"}, {"name": "sex", "kind": "categorical"}]}"#,
        )
        .unwrap()
    }

    const FIVE: &str = "bp,na1,na2,age,sex\n\
                        120,3.1,2.9,40,m\n\
                        130,4.0,NA,55,f\n\
                        118,2.5,2.6,33,f\n\
                        125,3.3,3.0,61,m\n\
                        140,5.1,4.8,70,f\n";

    #[test]
    fn missing_second_day_is_masked() {
        let t: LoadedTable<f64> = read_table(FIVE.as_bytes(), &schema()).unwrap();
        assert_eq!(t.dataset.n(), 5);
        assert_eq!(t.dataset.present.iter().filter(|&&p| !p).count(), 1);
        assert!(!t.dataset.is_present(1, 1));
        assert_eq!(t.dataset.z_names, vec!["age"]);
        assert_eq!(t.dataset.categoricals[0].values[1], "f");
    }

    #[test]
    fn missing_outcome_drops_row() {
        let text = FIVE.replace("130,4.0", "NA,4.0");
        let t: LoadedTable<f64> = read_table(text.as_bytes(), &schema()).unwrap();
        assert_eq!((t.rows_read, t.dropped_missing, t.dataset.n()), (5, 1, 4));
    }

    #[test]
    fn filters_drop_rows() {
        let mut s = schema();
        s.filters.push(RowFilter {
            column: "age".into(),
            max: Some(60.0),
            ..Default::default()
        });
        let t: LoadedTable<f64> = read_table(FIVE.as_bytes(), &s).unwrap();
        assert_eq!((t.dropped_filtered, t.dataset.n()), (2, 3));
    }

    #[test]
    fn schema_and_parse_errors() {
        let mut s = schema();
        s.outcome_column = "sbp".into();
        assert!(matches!(read_table::<f64, _>(FIVE.as_bytes(), &s), Err(Error::SchemaMismatch(c)) if c == "sbp"));
        let text = FIVE.replace("2.5", "abc");
        match read_table::<f64, _>(text.as_bytes(), &schema()) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column.as_str()), (4, "na1")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dummy_coding() {
        let col = |v: &[&str]| CategoricalColumn {
            name: "c".into(),
            values: v.iter().map(|s| s.to_string()).collect(),
        };
        let (dm, w) = encode_categoricals::<f64>(&[col(&["a", "b", "a"])], 3).unwrap();
        assert_eq!((dm.cols(), w.len()), (1, 0));
        assert_eq!(dm.values.column(0), vec![0.0, 1.0, 0.0]);
        let (dm, _) = encode_categoricals::<f64>(&[col(&["x", "y", "z", "y"])], 4).unwrap();
        assert_eq!(dm.cols(), 2);
        assert_eq!(dm.terms.len(), 1);
        assert!((0..4).all(|i| dm.values.row(i).iter().sum::<f64>() <= 1.0));
        assert_eq!(dm.columns[0].name, "c=y");
        let (dm, w) = encode_categoricals::<f64>(&[col(&["k", "k"])], 2).unwrap();
        assert_eq!((dm.cols(), w.len()), (0, 1));
        let many: Vec<String> = (0..21).map(|i| i.to_string()).collect();
        let many: Vec<&str> = many.iter().map(|s| s.as_str()).collect();
        assert!(matches!(
            encode_categoricals::<f64>(&[col(&many)], 21),
            Err(Error::TooManyLevels { levels: 21, .. })
        ));
    }
}
