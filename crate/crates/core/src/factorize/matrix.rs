use std::collections::HashSet;
use std::io::{Read, Write};

use ndarray::Array2;

use crate::error::{Error, Result};

/// User x dimension count matrix. Dimensions are hours of day or POI
/// categories.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityMatrix {
    pub values: Array2<f64>,
    pub row_keys: Vec<String>,
    pub col_labels: Vec<String>,
}

fn check_unique(keys: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::with_capacity(keys.len());
    for k in keys {
        if !seen.insert(k.as_str()) {
            return Err(Error::invalid(format!("duplicate {what} {k:?}")));
        }
    }
    Ok(())
}

impl ActivityMatrix {
    pub fn new(
        values: Array2<f64>,
        row_keys: Vec<String>,
        col_labels: Vec<String>,
    ) -> Result<Self> {
        if values.nrows() != row_keys.len() || values.ncols() != col_labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "values are {}x{} but {} row keys and {} column labels were given",
                values.nrows(),
                values.ncols(),
                row_keys.len(),
                col_labels.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(format!(
                "activity entries must be finite and >= 0, found {v}"
            )));
        }
        check_unique(&row_keys, "row key")?;
        check_unique(&col_labels, "column label")?;
        Ok(ActivityMatrix {
            values,
            row_keys,
            col_labels,
        })
    }

    /// Unlabelled matrix with rows `r0..` and columns `c0..`.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        let rows = (0..values.nrows()).map(|i| format!("r{i}")).collect();
        let cols = (0..values.ncols()).map(|j| format!("c{j}")).collect();
        ActivityMatrix::new(values, rows, cols)
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    /// CSV with header `user_id,<label>...` and one row per user.
    pub fn read_csv<R: Read>(source: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(source);
        let headers = rdr.headers()?.clone();
        if headers.is_empty() {
            return Err(Error::Malformed("empty matrix header".into()));
        }
        let col_labels: Vec<String> = headers.iter().skip(1).map(String::from).collect();
        let mut row_keys = Vec::new();
        let mut data = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            row_keys.push(rec.get(0).unwrap_or("").to_string());
            for f in rec.iter().skip(1) {
                data.push(f.trim().parse::<f64>().map_err(|_| {
                    Error::Malformed(format!("line {line}: {f:?} is not a number"))
                })?);
            }
        }
        let values = Array2::from_shape_vec((row_keys.len(), col_labels.len()), data)
            .map_err(|e| Error::Malformed(e.to_string()))?;
        ActivityMatrix::new(values, row_keys, col_labels)
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        write_labelled(
            sink,
            "user_id",
            &self.row_keys,
            &self.col_labels,
            &self.values,
        )
    }
}

/// Writes `values` with a leading key column.
pub(crate) fn write_labelled<W: Write>(
    sink: W,
    corner: &str,
    row_keys: &[String],
    col_labels: &[String],
    values: &Array2<f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = Vec::with_capacity(col_labels.len() + 1);
    header.push(corner.to_string());
    header.extend(col_labels.iter().cloned());
    w.write_record(&header)?;
    for (key, row) in row_keys.iter().zip(values.rows()) {
        let mut rec = Vec::with_capacity(row.len() + 1);
        rec.push(key.clone());
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Weight matrix rows paired with the keys they belong to; the common input
/// of group averaging and clustering for both matrix and tensor models.
pub trait Factors {
    /// `N x k` per-user weights.
    fn weights(&self) -> &Array2<f64>;
    fn row_keys(&self) -> &[String];
}
