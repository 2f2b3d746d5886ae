//! Datasets and their on-disk form.
//!
//! A dataset CSV has a header row with the feature names followed by `y`,
//! then one row per observation. Causal masks live in a JSON sidecar.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::util::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    /// Class indices (stored as floats) or continuous responses.
    pub y: Vec<f64>,
    pub causal_mask: Option<Vec<bool>>,
    pub feature_names: Vec<String>,
}

pub fn default_feature_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("f{j}")).collect()
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<f64>) -> Result<Self> {
        let names = default_feature_names(x.ncols());
        Self::with_names(x, y, names)
    }

    pub fn with_names(x: Matrix, y: Vec<f64>, feature_names: Vec<String>) -> Result<Self> {
        let ds = Dataset {
            x,
            y,
            causal_mask: None,
            feature_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.y.len() != self.x.nrows() {
            return Err(Error::dims(
                format!("{} labels", self.x.nrows()),
                format!("{} labels", self.y.len()),
            ));
        }
        if self.feature_names.len() != self.x.ncols() {
            return Err(Error::dims(
                format!("{} feature names", self.x.ncols()),
                self.feature_names.len(),
            ));
        }
        if let Some(mask) = &self.causal_mask {
            if mask.len() != self.x.ncols() {
                return Err(Error::dims(
                    format!("mask of length {}", self.x.ncols()),
                    mask.len(),
                ));
            }
        }
        if !self.x.iter().chain(self.y.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(
                "dataset contains non-finite values".into(),
            ));
        }
        Ok(())
    }

    /// Rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let x = Matrix::from_fn(idx.len(), self.p(), |i, j| self.x[(idx[i], j)]);
        Dataset {
            x,
            y: idx.iter().map(|&i| self.y[i]).collect(),
            causal_mask: self.causal_mask.clone(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Shuffled split; the second part holds `round(fraction * n)` rows.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Config(format!(
                "split fraction must lie in [0, 1), got {fraction}"
            )));
        }
        let mut idx: Vec<usize> = (0..self.n()).collect();
        idx.shuffle(&mut rng(seed));
        let n_second = (fraction * self.n() as f64).round() as usize;
        let (second, first) = idx.split_at(n_second);
        Ok((self.subset(first), self.subset(second)))
    }

    /// Distinct class labels as indices, or an error if `y` is not integral.
    pub fn class_labels(&self) -> Result<Vec<usize>> {
        self.y
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(Error::InvalidInput(format!(
                        "label {v} is not a nonnegative class index"
                    )))
                }
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = self.feature_names.clone();
        header.push("y".into());
        wr.write_record(&header)?;
        let mut row = Vec::with_capacity(self.p() + 1);
        for i in 0..self.n() {
            row.clear();
            row.extend((0..self.p()).map(|j| self.x[(i, j)].to_string()));
            row.push(self.y[i].to_string());
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Dataset> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header: Vec<String> = rd.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let y_col = header
            .iter()
            .position(|h| h == "y")
            .ok_or_else(|| Error::InvalidInput("dataset header has no `y` column".into()))?;
        if y_col != header.len() - 1 {
            return Err(Error::InvalidInput("`y` must be the last column".into()));
        }
        let p = header.len() - 1;
        if p == 0 {
            return Err(Error::InvalidInput("dataset has no feature columns".into()));
        }
        let mut values = Vec::new();
        let mut y = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            if rec.len() != p + 1 {
                return Err(Error::InvalidInput(format!(
                    "row {} has {} fields, expected {}",
                    line + 2,
                    rec.len(),
                    p + 1
                )));
            }
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::InvalidInput(format!(
                        "row {} column {}: `{field}` is not a number",
                        line + 2,
                        j + 1
                    ))
                })?;
                if j == p {
                    y.push(v);
                } else {
                    values.push(v);
                }
            }
        }
        let n = y.len();
        let x = Matrix::from_row_slice(n, p, &values);
        Dataset::with_names(x, y, header[..p].to_vec())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(f)
    }

    pub fn load_csv(path: &Path) -> Result<Dataset> {
        Dataset::read_csv(std::fs::File::open(path)?)
    }
}

/// JSON sidecar recording the ground truth of a simulated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskFile {
    pub seed: u64,
    pub feature_names: Vec<String>,
    pub causal_mask: Vec<bool>,
    /// `column_origin[j]` is the pre-permutation column of output column `j`.
    #[serde(default)]
    pub column_origin: Vec<usize>,
}

impl MaskFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<MaskFile> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let x = Matrix::from_row_slice(2, 2, &[0.1, -1.0 / 3.0, 1e-300, 12345.678]);
        let ds = Dataset::new(x, vec![0.0, 1.0]).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("f1,f2,y\n"));
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn csv_requires_trailing_y() {
        let err = Dataset::read_csv("y,f1\n1,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
        assert!(Dataset::read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(Dataset::read_csv("f1,y\nabc,1\n".as_bytes()).is_err());
    }

    #[test]
    fn split_sizes() {
        let x = Matrix::from_fn(10, 2, |i, j| (i * 2 + j) as f64);
        let ds = Dataset::new(x, (0..10).map(|i| (i % 2) as f64).collect()).unwrap();
        let (a, b) = ds.split(0.2, 1).unwrap();
        assert_eq!((a.n(), b.n()), (8, 2));
        let (a2, b2) = ds.split(0.2, 1).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }

    #[test]
    fn validation_catches_mismatch() {
        assert!(Dataset::new(Matrix::zeros(3, 2), vec![0.0; 2]).is_err());
    }
}
