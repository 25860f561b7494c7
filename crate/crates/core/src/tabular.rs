//! Numeric tables with an explicit observation mask.
//!
//! A [`DataMatrix`] keeps values and a boolean mask of identical shape; a
//! `false` mask entry means the cell is missing. Missing cells are stored as
//! NaN internally, but no routine in this crate reads them: every accessor
//! consults the mask first.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default token written for, and recognised as, a missing cell.
pub const DEFAULT_MISSING_TOKEN: &str = "";

#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
    column_names: Vec<String>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>, mask: DMatrix<bool>, column_names: Vec<String>) -> Result<Self> {
        if values.shape() != mask.shape() {
            return Err(Error::dims(format!(
                "values are {:?} but mask is {:?}",
                values.shape(),
                mask.shape()
            )));
        }
        let (n, p) = values.shape();
        if n == 0 || p == 0 {
            return Err(Error::invalid("a data matrix needs at least one row and one column"));
        }
        if column_names.len() != p {
            return Err(Error::dims(format!(
                "{} column names for {} columns",
                column_names.len(),
                p
            )));
        }
        let mut values = values;
        for (v, &obs) in values.iter_mut().zip(mask.iter()) {
            if !obs {
                *v = f64::NAN;
            } else if !v.is_finite() {
                return Err(Error::invalid("observed entries must be finite"));
            }
        }
        Ok(Self {
            values,
            mask,
            column_names,
        })
    }

    /// Fully observed matrix.
    pub fn complete(values: DMatrix<f64>, column_names: Vec<String>) -> Result<Self> {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self::new(values, mask, column_names)
    }

    /// Builds a matrix from rows of optional cells; `None` is missing.
    pub fn from_rows(rows: &[Vec<Option<f64>>], column_names: Vec<String>) -> Result<Self> {
        let n = rows.len();
        let p = column_names.len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
            return Err(Error::dims(format!("row {i} has {} cells, expected {p}", r.len())));
        }
        let values = DMatrix::from_fn(n, p, |i, j| rows[i][j].unwrap_or(f64::NAN));
        let mask = DMatrix::from_fn(n, p, |i, j| rows[i][j].is_some());
        Self::new(values, mask, column_names)
    }

    /// Column names `prefix1, prefix2, ...`.
    pub fn default_names(prefix: &str, p: usize) -> Vec<String> {
        (1..=p).map(|j| format!("{prefix}{j}")).collect()
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    /// Raw storage. Missing cells hold NaN.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn is_observed(&self, row: usize, col: usize) -> bool {
        self.mask[(row, col)]
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.mask[(row, col)].then(|| self.values[(row, col)])
    }

    pub fn observed_count(&self, col: usize) -> usize {
        self.mask.column(col).iter().filter(|&&m| m).count()
    }

    pub fn missing_count(&self) -> usize {
        self.mask.iter().filter(|&&m| !m).count()
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    /// Ascending indices of columns with at least one missing cell.
    pub fn missing_columns(&self) -> Vec<usize> {
        (0..self.ncols())
            .filter(|&j| self.mask.column(j).iter().any(|&m| !m))
            .collect()
    }

    /// Rows (ascending) where `col` is missing.
    pub fn missing_rows(&self, col: usize) -> Vec<usize> {
        (0..self.nrows()).filter(|&i| !self.mask[(i, col)]).collect()
    }

    pub fn check_column(&self, col: usize) -> Result<()> {
        if col >= self.ncols() {
            return Err(Error::invalid(format!(
                "column index {col} out of range for {} columns",
                self.ncols()
            )));
        }
        Ok(())
    }

    /// Dense block over `rows` x `cols`; every selected cell must be observed.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(rows.len(), cols.len());
        for (c, &j) in cols.iter().enumerate() {
            for (r, &i) in rows.iter().enumerate() {
                if !self.mask[(i, j)] {
                    return Err(Error::invalid(format!("cell ({i}, {j}) is missing")));
                }
                out[(r, c)] = self.values[(i, j)];
            }
        }
        Ok(out)
    }

    /// Observed values of `col` at `rows`.
    pub fn column_at(&self, col: usize, rows: &[usize]) -> Result<DVector<f64>> {
        let m = self.block(rows, &[col])?;
        Ok(DVector::from_column_slice(m.as_slice()))
    }

    /// Copy restricted to `rows`, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<DataMatrix> {
        if rows.is_empty() {
            return Err(Error::EmptyResult("row selection is empty".into()));
        }
        let values = self.values.select_rows(rows);
        let mask = self.mask.select_rows(rows);
        Ok(DataMatrix {
            values,
            mask,
            column_names: self.column_names.clone(),
        })
    }

    /// Copy restricted to `cols`, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<DataMatrix> {
        if cols.is_empty() {
            return Err(Error::EmptyResult("column selection is empty".into()));
        }
        for &c in cols {
            self.check_column(c)?;
        }
        Ok(DataMatrix {
            values: self.values.select_columns(cols),
            mask: self.mask.select_columns(cols),
            column_names: cols.iter().map(|&c| self.column_names[c].clone()).collect(),
        })
    }

    /// Appends fully observed columns.
    pub fn append_columns(&self, extra: &DMatrix<f64>, names: &[String]) -> Result<DataMatrix> {
        if extra.nrows() != self.nrows() || extra.ncols() != names.len() {
            return Err(Error::dims("appended block does not conform"));
        }
        let (n, p) = (self.nrows(), self.ncols());
        let q = extra.ncols();
        let values = DMatrix::from_fn(n, p + q, |i, j| {
            if j < p {
                self.values[(i, j)]
            } else {
                extra[(i, j - p)]
            }
        });
        let mask = DMatrix::from_fn(n, p + q, |i, j| j >= p || self.mask[(i, j)]);
        let mut column_names = self.column_names.clone();
        column_names.extend(names.iter().cloned());
        DataMatrix::new(values, mask, column_names)
    }

    /// Sets a cell to an observed value.
    pub fn fill(&mut self, row: usize, col: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite value for cell ({row}, {col})"
            )));
        }
        self.values[(row, col)] = value;
        self.mask[(row, col)] = true;
        Ok(())
    }

    /// Hides a cell.
    pub fn hide(&mut self, row: usize, col: usize) {
        self.values[(row, col)] = f64::NAN;
        self.mask[(row, col)] = false;
    }

    /// True when both matrices have the same shape, names, mask, and bitwise
    /// equal observed values.
    pub fn same_observed(&self, other: &DataMatrix) -> bool {
        self.values.shape() == other.values.shape()
            && self.column_names == other.column_names
            && self.mask == other.mask
            && self
                .values
                .iter()
                .zip(other.values.iter())
                .zip(self.mask.iter())
                .all(|((a, b), &m)| !m || a.to_bits() == b.to_bits())
    }
}

/// Row partition into complete and incomplete cases with respect to a set of
/// columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseSplit {
    pub cc_rows: Vec<usize>,
    pub ic_rows: Vec<usize>,
}

pub fn split_cases(data: &DataMatrix, cols: &[usize]) -> Result<CaseSplit> {
    if cols.is_empty() {
        return Err(Error::invalid("split_cases needs at least one column"));
    }
    for &c in cols {
        data.check_column(c)?;
    }
    let (cc_rows, ic_rows) = (0..data.nrows()).partition(|&i| cols.iter().all(|&j| data.mask[(i, j)]));
    Ok(CaseSplit { cc_rows, ic_rows })
}

/// Formats a float with the shortest digit string that parses back to the
/// same bits.
pub fn format_float(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

pub fn read_csv(path: impl AsRef<Path>, missing_token: &str) -> Result<DataMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv_from(BufReader::new(file), missing_token)
}

pub fn read_csv_from<R: Read>(reader: R, missing_token: &str) -> Result<DataMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::Parse {
            row: 1,
            column: 1,
            message: "missing header row".into(),
        });
    }
    let p = header.len();
    let token = missing_token.trim();
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|pos| pos.line() as usize).unwrap_or(rows.len() + 2);
        if record.len() != p {
            return Err(Error::Parse {
                row: line,
                column: record.len().min(p) + 1,
                message: format!("expected {p} fields, found {}", record.len()),
            });
        }
        let mut row = Vec::with_capacity(p);
        for (j, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if cell == token {
                row.push(None);
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(Some(v)),
                _ => {
                    return Err(Error::Parse {
                        row: line,
                        column: j + 1,
                        message: format!("`{cell}` is not a finite number or the missing token"),
                    })
                }
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            row: 2,
            column: 1,
            message: "no data rows".into(),
        });
    }
    DataMatrix::from_rows(&rows, header)
}

pub fn write_csv(data: &DataMatrix, path: impl AsRef<Path>, missing_token: &str) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_csv_to(data, &mut w, missing_token)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_csv_to<W: Write>(data: &DataMatrix, writer: W, missing_token: &str) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().from_writer(writer);
    wtr.write_record(data.column_names())?;
    let mut cells = Vec::with_capacity(data.ncols());
    for i in 0..data.nrows() {
        cells.clear();
        for j in 0..data.ncols() {
            cells.push(match data.get(i, j) {
                Some(v) => format_float(v),
                None => missing_token.to_string(),
            });
        }
        wtr.write_record(&cells)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
