use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::demand::NestStructure;

/// Instrument matrix with one labelled column per instrument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentSet {
    pub matrix: DMatrix<f64>,
    pub labels: Vec<String>,
    /// Columns removed as linearly dependent on earlier ones.
    pub dropped: Vec<String>,
}

impl InstrumentSet {
    pub fn new(matrix: DMatrix<f64>, labels: Vec<String>) -> Self {
        Self {
            matrix,
            labels,
            dropped: Vec::new(),
        }
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Drops columns that are linear combinations of earlier columns.
    pub fn drop_collinear(self, tolerance: f64) -> Self {
        let keep = independent_columns(&self.matrix, tolerance);
        let mut dropped = self.dropped;
        for (i, label) in self.labels.iter().enumerate() {
            if !keep.contains(&i) {
                dropped.push(label.clone());
            }
        }
        if dropped.is_empty() {
            info!("instrument matrix has full column rank ({})", keep.len());
        } else {
            warn!("dropped {} collinear instrument columns: {}", dropped.len(), dropped.join(", "));
        }
        Self {
            matrix: self.matrix.select_columns(keep.iter()),
            labels: keep.iter().map(|&i| self.labels[i].clone()).collect(),
            dropped,
        }
    }
}

/// Indices of a maximal set of linearly independent columns, preferring
/// earlier ones.
///
/// A column is kept when the part of it orthogonal to the columns already
/// kept has norm above `tolerance` times its own norm.
pub fn independent_columns(matrix: &DMatrix<f64>, tolerance: f64) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::new();
    for (i, column) in matrix.column_iter().enumerate() {
        let norm = column.norm();
        if norm == 0.0 {
            continue;
        }
        let mut residual: DVector<f64> = column / norm;
        // two passes keep the basis orthogonal in floating point
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&residual);
                residual.axpy(-proj, q, 1.0);
            }
        }
        let left = residual.norm();
        if left > tolerance {
            basis.push(residual / left);
            keep.push(i);
        }
    }
    keep
}

/// Differentiation instruments for one market.
///
/// For each column `x`: `sum_{k != j} (x_k - x_j)^2`; then for each
/// unordered pair of columns `(x, y)`: `sum_{k != j} (x_k - x_j)(y_k - y_j)`.
pub fn build_differentiation_ivs(characteristics: &DMatrix<f64>) -> DMatrix<f64> {
    let n = characteristics.nrows();
    let k = characteristics.ncols();
    let mut out = DMatrix::zeros(n, k + k * k.saturating_sub(1) / 2);
    if n < 2 {
        if n == 1 {
            warn!("single-product market: differentiation instruments set to zero");
        }
        return out;
    }
    for j in 0..n {
        let mut col = 0;
        for a in 0..k {
            out[(j, col)] = (0..n)
                .map(|i| (characteristics[(i, a)] - characteristics[(j, a)]).powi(2))
                .sum();
            col += 1;
        }
        for a in 0..k {
            for b in a + 1..k {
                out[(j, col)] = (0..n)
                    .map(|i| {
                        (characteristics[(i, a)] - characteristics[(j, a)])
                            * (characteristics[(i, b)] - characteristics[(j, b)])
                    })
                    .sum();
                col += 1;
            }
        }
    }
    out
}

/// Labels matching the columns of [`build_differentiation_ivs`].
pub fn differentiation_labels(names: &[String]) -> Vec<String> {
    let mut labels: Vec<String> = names.iter().map(|n| format!("diff:{n}")).collect();
    for a in 0..names.len() {
        for b in a + 1..names.len() {
            labels.push(format!("diff:{}*{}", names[a], names[b]));
        }
    }
    labels
}

/// Number of products sharing each product's nest, itself included.
pub fn build_count_ivs(nests: &NestStructure) -> DVector<f64> {
    let groups = nests.groups();
    DVector::from_iterator(
        groups.len(),
        groups.iter().map(|g| groups.iter().filter(|h| *h == g).count() as f64),
    )
}
