//! Dense row-major node feature matrices.

use serde::{Deserialize, Serialize};

use crate::error::{input, Result};

/// A `|V| × d` matrix of node embeddings stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return input(format!(
                "feature buffer has {} values, expected {rows}×{cols}",
                data.len()
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return input(format!(
                "non-finite feature at row {}, column {}",
                pos / cols.max(1),
                pos % cols.max(1)
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != cols) {
            return input(format!(
                "row {i} has {} columns, expected {cols}",
                rows[i].len()
            ));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        let cols = self.cols.max(1);
        self.data
            .chunks_exact(cols)
            .take(if self.cols == 0 { 0 } else { self.rows })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `‖self − other‖_F`. Panics on shape mismatch.
    pub fn frobenius_distance(&self, other: &FeatureMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn scaled(&self, factor: f64) -> FeatureMatrix {
        FeatureMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// `self += factor · other`. Panics on shape mismatch.
    pub fn add_scaled(&mut self, other: &FeatureMatrix, factor: f64) {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
    }

    /// Rows selected by `index`, in order.
    pub fn select_rows(&self, index: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(index.len() * self.cols);
        for &i in index {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            rows: index.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// Writes one comma-separated row per line using shortest round-trip
    /// float formatting, so parsing the output recovers the exact bits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.rows {
            let line: Vec<String> = self.row(i).iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
