//! Numeric CSV tables with a header row. Lines starting with `#` are
//! skipped, so files written by this crate can be read back.

use std::io::Read;

use ndarray::Array2;

use crate::error::{McenError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    /// Row-major values, one row per data line.
    pub values: Array2<f64>,
}

/// Covariates and responses split out of a [`Table`] by column name.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub covariates: Vec<String>,
    pub responses: Vec<String>,
}

pub fn read_table<R: Read>(input: R) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| McenError::Table(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(McenError::Table("header row is required".into()));
    }
    for (i, h) in headers.iter().enumerate() {
        if headers[..i].contains(h) {
            return Err(McenError::Table(format!("duplicate column '{h}'")));
        }
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| McenError::Table(e.to_string()))?;
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| McenError::BadValue {
                row: i + 1,
                column: headers[j].clone(),
            })?;
            if !v.is_finite() {
                return Err(McenError::BadValue {
                    row: i + 1,
                    column: headers[j].clone(),
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    let values = Array2::from_shape_vec((rows, headers.len()), data)
        .map_err(|e| McenError::Table(e.to_string()))?;
    Ok(Table { headers, values })
}

impl Table {
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| McenError::MissingColumn(name.to_string()))
    }

    fn gather(&self, idx: &[usize]) -> Array2<f64> {
        Array2::from_shape_fn((self.values.nrows(), idx.len()), |(i, j)| self.values[[i, idx[j]]])
    }

    /// Named columns become responses; every other column is a covariate.
    pub fn split(&self, responses: &[String]) -> Result<Dataset> {
        if responses.is_empty() {
            return Err(McenError::Table("at least one response column is required".into()));
        }
        let y_idx = responses
            .iter()
            .map(|r| self.column_index(r))
            .collect::<Result<Vec<_>>>()?;
        let x_idx: Vec<usize> = (0..self.headers.len()).filter(|j| !y_idx.contains(j)).collect();
        if x_idx.is_empty() {
            return Err(McenError::Table("no covariate columns left".into()));
        }
        Ok(Dataset {
            x: self.gather(&x_idx),
            y: self.gather(&y_idx),
            covariates: x_idx.iter().map(|&j| self.headers[j].clone()).collect(),
            responses: responses.to_vec(),
        })
    }

    /// The named covariates in the given order. Besides them the table may
    /// only hold columns listed in `ignorable`.
    pub fn covariates(&self, names: &[String], ignorable: &[String]) -> Result<Array2<f64>> {
        let idx = names
            .iter()
            .map(|c| self.column_index(c))
            .collect::<Result<Vec<_>>>()?;
        if let Some(extra) = self
            .headers
            .iter()
            .find(|h| !names.contains(h) && !ignorable.contains(h))
        {
            return Err(McenError::Table(format!(
                "unexpected column '{extra}'; the fit expects {} covariates",
                names.len()
            )));
        }
        Ok(self.gather(&idx))
    }
}
