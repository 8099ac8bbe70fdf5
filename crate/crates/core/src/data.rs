//! Ingestion of tabular data with missing covariate cells.
//!
//! Missingness is carried by an explicit boolean mask. Unobserved cells of the
//! covariate matrix hold `NaN` so that any accidental arithmetic on them is
//! visible instead of silently producing a number.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_NA_TOKEN: &str = "NA";

/// Response vector plus covariate matrix with a per-entry observed mask.
#[derive(Debug, Clone)]
pub struct ObservedDataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    mask: DMatrix<bool>,
    column_names: Vec<String>,
    response_name: String,
}

impl ObservedDataset {
    /// Builds a dataset, checking shapes and that `y` and every observed cell
    /// of `x` are finite. `mask[(i, k)] == true` means observed.
    pub fn new(
        y: DVector<f64>,
        mut x: DMatrix<f64>,
        mask: DMatrix<bool>,
        column_names: Vec<String>,
    ) -> Result<Self> {
        let (n, k) = x.shape();
        if n == 0 || k == 0 {
            return Err(Error::InvalidDataset(format!("need n >= 1 and K >= 1, got {n}x{k}")));
        }
        if y.len() != n {
            return Err(Error::InvalidDataset(format!("y has length {} but x has {n} rows", y.len())));
        }
        if mask.shape() != (n, k) {
            return Err(Error::InvalidDataset(format!(
                "mask is {:?} but x is {n}x{k}",
                mask.shape()
            )));
        }
        if column_names.len() != k {
            return Err(Error::InvalidDataset(format!(
                "{} column names for {k} columns",
                column_names.len()
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!("response row {i} is missing or non-finite")));
        }
        for j in 0..k {
            for i in 0..n {
                if mask[(i, j)] {
                    if !x[(i, j)].is_finite() {
                        return Err(Error::InvalidDataset(format!(
                            "observed cell ({i}, {j}) is non-finite"
                        )));
                    }
                } else {
                    x[(i, j)] = f64::NAN;
                }
            }
        }
        Ok(Self {
            y,
            x,
            mask,
            column_names,
            response_name: "y".to_string(),
        })
    }

    /// Fully observed dataset.
    pub fn complete(y: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        let (n, k) = x.shape();
        let names = (1..=k).map(|j| format!("x{j}")).collect();
        Self::new(y, x, DMatrix::from_element(n, k, true), names)
    }

    pub fn with_response_name(mut self, name: impl Into<String>) -> Self {
        self.response_name = name.into();
        self
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// Covariates; unobserved cells are `NaN`.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn is_observed(&self, row: usize, col: usize) -> bool {
        self.mask[(row, col)]
    }

    pub fn value(&self, row: usize, col: usize) -> Option<f64> {
        self.mask[(row, col)].then(|| self.x[(row, col)])
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    pub fn missing_count(&self) -> usize {
        self.mask.iter().filter(|m| !**m).count()
    }

    /// Rows whose covariates are all observed.
    pub fn complete_rows(&self) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| (0..self.k()).all(|j| self.mask[(i, j)]))
            .collect()
    }

    /// Dense submatrix over the given rows and columns. Every selected cell
    /// must be observed.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(rows.len(), cols.len());
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                if !self.mask[(i, j)] {
                    return Err(Error::InvalidDataset(format!(
                        "cell ({i}, {j}) selected for fitting is unobserved"
                    )));
                }
                out[(a, b)] = self.x[(i, j)];
            }
        }
        Ok(out)
    }

    pub fn subvector(&self, rows: &[usize]) -> DVector<f64> {
        DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]))
    }

    /// Writes the dataset as CSV with the response first and `na_token` in
    /// unobserved cells.
    pub fn write_csv<W: Write>(&self, writer: W, na_token: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![self.response_name.clone()];
        header.extend(self.column_names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = Vec::with_capacity(self.k() + 1);
            rec.push(format_float(self.y[i]));
            for j in 0..self.k() {
                rec.push(match self.value(i, j) {
                    Some(v) => format_float(v),
                    None => na_token.to_string(),
                });
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl PartialEq for ObservedDataset {
    /// Equal when masks, names and every observed value agree bit for bit.
    fn eq(&self, other: &Self) -> bool {
        self.mask == other.mask
            && self.column_names == other.column_names
            && self.response_name == other.response_name
            && self.y.iter().zip(other.y.iter()).all(|(a, b)| a.to_bits() == b.to_bits())
            && self
                .x
                .iter()
                .zip(other.x.iter())
                .zip(self.mask.iter())
                .all(|((a, b), &m)| !m || a.to_bits() == b.to_bits())
    }
}

// `{:?}` on f64 prints the shortest string that parses back to the same bits.
fn format_float(v: f64) -> String {
    format!("{v:?}")
}

/// Loads a comma-delimited file with a header row. Cells equal to `na_token`
/// (after trimming) are recorded as missing.
pub fn load_csv(path: impl AsRef<Path>, na_token: &str, response_column: &str) -> Result<ObservedDataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, na_token, response_column)
}

pub fn read_csv<R: Read>(reader: R, na_token: &str, response_column: &str) -> Result<ObservedDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::EmptyInput("no header row".into()));
    }
    let resp_idx = headers
        .iter()
        .position(|h| h == response_column)
        .ok_or_else(|| Error::UnknownColumn(response_column.to_string()))?;
    let cov_idx: Vec<usize> = (0..headers.len()).filter(|&j| j != resp_idx).collect();
    if cov_idx.is_empty() {
        return Err(Error::InvalidDataset("no covariate columns".into()));
    }
    let column_names: Vec<String> = cov_idx.iter().map(|&j| headers[j].to_string()).collect();

    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut mask = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let resp = &rec[resp_idx];
        if resp == na_token || resp.is_empty() {
            return Err(Error::MissingResponse {
                line,
                row,
                column: response_column.to_string(),
            });
        }
        y.push(parse_cell(resp, line, response_column)?);
        for (c, &j) in cov_idx.iter().enumerate() {
            let cell = &rec[j];
            if cell == na_token {
                x.push(f64::NAN);
                mask.push(false);
            } else {
                x.push(parse_cell(cell, line, &column_names[c])?);
                mask.push(true);
            }
        }
    }
    if y.is_empty() {
        return Err(Error::EmptyInput("no data rows".into()));
    }
    let n = y.len();
    let k = cov_idx.len();
    Ok(ObservedDataset::new(
        DVector::from_vec(y),
        DMatrix::from_row_slice(n, k, &x),
        DMatrix::from_row_slice(n, k, &mask),
        column_names,
    )?
    .with_response_name(response_column))
}

fn parse_cell(cell: &str, line: u64, column: &str) -> Result<f64> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            line,
            column: column.to_string(),
            value: cell.to_string(),
        }),
    }
}

/// The covariate matrix with every unobserved entry replaced by 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroFilledMatrix {
    xt: DMatrix<f64>,
    source_mask: DMatrix<bool>,
}

impl ZeroFilledMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.xt
    }

    pub fn source_mask(&self) -> &DMatrix<bool> {
        &self.source_mask
    }

    pub fn nrows(&self) -> usize {
        self.xt.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.xt.ncols()
    }
}

/// Numerical rank with tolerance `max(n, K) · σ_max · ε`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    let tol = m.nrows().max(m.ncols()) as f64 * smax * f64::EPSILON;
    sv.iter().filter(|&&s| s > tol).count()
}

pub fn has_full_column_rank(m: &DMatrix<f64>) -> bool {
    m.nrows() >= m.ncols() && numerical_rank(m) == m.ncols()
}

/// Builds `X̃` and checks that it has full column rank.
pub fn zero_fill(d: &ObservedDataset) -> Result<ZeroFilledMatrix> {
    let xt = DMatrix::from_fn(d.n(), d.k(), |i, j| d.value(i, j).unwrap_or(0.0));
    if !has_full_column_rank(&xt) {
        return Err(Error::RankDeficient("X̃".into()));
    }
    Ok(ZeroFilledMatrix {
        xt,
        source_mask: d.mask().clone(),
    })
}
