//! CSV and JSON emission. Numbers are written in the shortest form that
//! parses back to the same `f64`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use super::ExperimentError;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

/// A table of named numeric columns, one row per grid point (or case).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, column: Vec<f64>) {
        if let Some(first) = self.columns.first() {
            assert_eq!(first.len(), column.len(), "column length");
        }
        self.header.push(name.into());
        self.columns.push(column);
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.header
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn write(&self, path: &Path) -> Result<(), ExperimentError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| ExperimentError::io(path, e))?;
        w.write_record(&self.header)
            .map_err(|e| ExperimentError::io(path, e))?;
        for r in 0..self.rows() {
            w.write_record(self.columns.iter().map(|c| fmt_f64(c[r])))
                .map_err(|e| ExperimentError::io(path, e))?;
        }
        w.flush().map_err(|e| ExperimentError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, ExperimentError> {
        let mut r = csv::Reader::from_path(path).map_err(|e| ExperimentError::io(path, e))?;
        let header: Vec<String> = r
            .headers()
            .map_err(|e| ExperimentError::io(path, e))?
            .iter()
            .map(String::from)
            .collect();
        let mut columns = vec![Vec::new(); header.len()];
        for rec in r.records() {
            let rec = rec.map_err(|e| ExperimentError::io(path, e))?;
            for (c, field) in rec.iter().enumerate() {
                let v = field
                    .parse()
                    .map_err(|_| ExperimentError::io(path, format!("bad number {field:?}")))?;
                columns[c].push(v);
            }
        }
        Ok(Self { header, columns })
    }
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<(), ExperimentError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| ExperimentError::io(path, e))?;
    for r in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|c| fmt_f64(m[(r, c)])))
            .map_err(|e| ExperimentError::io(path, e))?;
    }
    w.flush().map_err(|e| ExperimentError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let file = File::create(path).map_err(|e| ExperimentError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| ExperimentError::io(path, e))?;
    w.write_all(b"\n")
        .map_err(|e| ExperimentError::io(path, e))?;
    w.flush().map_err(|e| ExperimentError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut t = Table::new();
        t.push("t", vec![0.0, 0.005, 6.0]);
        t.push("v", vec![1.0 / 3.0, -2.5e-300, std::f64::consts::PI * 1e12]);
        t.write(&path).unwrap();
        assert_eq!(Table::read(&path).unwrap(), t);
    }
}
