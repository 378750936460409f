use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};

/// Column names assigned to each variable role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Roles {
    pub a: Vec<String>,
    pub x: Vec<String>,
    pub w: Vec<String>,
    pub y: String,
}

impl Roles {
    pub fn validate(&self) -> Result<()> {
        if self.a.is_empty() || self.x.is_empty() || self.w.is_empty() || self.y.is_empty() {
            return Err(invalid("every role (A, X, W, Y) needs at least one column"));
        }
        let mut all: Vec<&str> = self
            .a
            .iter()
            .chain(&self.x)
            .chain(&self.w)
            .map(String::as_str)
            .chain([self.y.as_str()])
            .collect();
        all.sort_unstable();
        if let Some(w) = all.windows(2).find(|w| w[0] == w[1]) {
            return Err(invalid(format!("column '{}' is assigned to more than one role", w[0])));
        }
        Ok(())
    }
}

fn csv_error(path: &Path, source: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a headed CSV file and assembles the role columns in the listed order.
pub fn load_dataset_csv(path: impl AsRef<Path>, roles: &Roles) -> Result<Dataset> {
    let path = path.as_ref();
    roles.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.is_empty() {
        return Err(Error::Data(format!("{}: empty file", path.display())));
    }
    let index = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("{}: column '{name}' not found", path.display())))
    };
    let lookup = |names: &[String]| names.iter().map(|n| index(n)).collect::<Result<Vec<_>>>();
    let (ia, ix, iw, iy) = (lookup(&roles.a)?, lookup(&roles.x)?, lookup(&roles.w)?, index(&roles.y)?);

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let wanted: Vec<usize> = ia.iter().chain(&ix).chain(&iw).copied().chain([iy]).collect();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = r + 2;
        let values = wanted
            .iter()
            .map(|&c| {
                let cell = record.get(c).unwrap_or("");
                cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    Error::Data(format!(
                        "{}: line {line}, column '{}': '{cell}' is not a finite number",
                        path.display(),
                        &header[c]
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    let n = rows.len();
    let (q, d, v) = (ia.len(), ix.len(), iw.len());
    let block = |offset: usize, width: usize| DMatrix::from_fn(n, width, |i, j| rows[i][offset + j]);
    Dataset::new(
        block(0, q),
        block(q, d),
        block(q + d, v),
        DVector::from_fn(n, |i, _| rows[i][q + d + v]),
    )
}
