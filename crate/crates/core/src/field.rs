//! Displacement fields sampled on the (save time × interior node) grid and
//! their CSV form.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Row-major displacement samples: one row per save time, one column per node.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    times: Vec<f64>,
    n_nodes: usize,
    values: Vec<f64>,
}

impl DisplacementField {
    pub fn new(times: Vec<f64>, n_nodes: usize, values: Vec<f64>) -> Result<Self> {
        if n_nodes == 0 || times.is_empty() {
            return Err(Error::Empty("displacement field needs nodes and times".into()));
        }
        if values.len() != times.len() * n_nodes {
            return Err(Error::Shape(format!(
                "{} values for {} times x {n_nodes} nodes",
                values.len(),
                times.len()
            )));
        }
        Ok(Self { times, n_nodes, values })
    }

    pub fn zeros(times: Vec<f64>, n_nodes: usize) -> Self {
        let values = vec![0.0; times.len() * n_nodes];
        Self { times, n_nodes, values }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }
    pub fn n_times(&self) -> usize {
        self.times.len()
    }
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, node: usize) -> f64 {
        self.values[row * self.n_nodes + node]
    }

    pub fn set(&mut self, row: usize, node: usize, v: f64) {
        self.values[row * self.n_nodes + node] = v;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.n_nodes..(row + 1) * self.n_nodes]
    }

    /// Rows `range` as a new field.
    pub fn rows(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.n_times() {
            return Err(Error::Shape(format!("row range {range:?} outside {} rows", self.n_times())));
        }
        Self::new(
            self.times[range.clone()].to_vec(),
            self.n_nodes,
            self.values[range.start * self.n_nodes..range.end * self.n_nodes].to_vec(),
        )
    }

    /// Rows whose time lies in `(lo, hi]`.
    pub fn window(&self, lo: f64, hi: f64) -> Result<Self> {
        let tol = 1e-9 * hi.abs().max(1e-30);
        let start = self.times.iter().position(|&t| t > lo + tol).unwrap_or(self.n_times());
        let end = self.times.iter().rposition(|&t| t <= hi + tol).map_or(0, |i| i + 1);
        self.rows(start..end)
    }

    pub fn node_series(&self, node: usize) -> Vec<f64> {
        (0..self.n_times()).map(|r| self.get(r, node)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n_nodes == other.n_nodes && self.times.len() == other.times.len()
    }

    /// CSV with a header row, time in the first column and 17 significant digits.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["time".to_string()];
        header.extend((1..=self.n_nodes).map(|i| format!("node_{i}")));
        wr.write_record(&header).map_err(csv_err)?;
        for r in 0..self.n_times() {
            let mut rec = vec![fmt_f64(self.times[r])];
            rec.extend(self.row(r).iter().map(|v| fmt_f64(*v)));
            wr.write_record(&rec).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let n_nodes = rd.headers().map_err(csv_err)?.len().saturating_sub(1);
        let mut times = Vec::new();
        let mut values = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != n_nodes + 1 {
                return Err(Error::Csv(format!("row with {} columns, expected {}", rec.len(), n_nodes + 1)));
            }
            times.push(parse_f64(&rec[0])?);
            for field in rec.iter().skip(1) {
                values.push(parse_f64(field)?);
            }
        }
        Self::new(times, n_nodes, values)
    }
}

/// Shortest form that still carries 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| Error::Csv(format!("bad number {s:?}: {e}")))
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e.to_string())
}
