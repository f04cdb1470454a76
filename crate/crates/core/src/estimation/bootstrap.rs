use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of parameter draws in the parametric bootstrap.
pub const BOOTSTRAP_DRAWS: usize = 1000;

/// Percentile interval for one output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub name: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    /// Standard deviation across draws.
    pub std_error: f64,
}

/// Draws from `N(center, covariance)`, one row per draw.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapDraws {
    pub names: Vec<String>,
    pub center: DVector<f64>,
    pub draws: DMatrix<f64>,
}

/// Samples `n` parameter vectors from a multivariate normal using the
/// eigen-decomposition of `covariance`.
///
/// A covariance with an eigenvalue below `-1e-10 * max(1, largest)` is
/// rejected rather than repaired.
pub fn sample_normal(
    names: Vec<String>,
    center: &DVector<f64>,
    covariance: &DMatrix<f64>,
    n: usize,
    seed: u64,
) -> Result<BootstrapDraws> {
    let p = center.len();
    if covariance.shape() != (p, p) {
        return Err(Error::dimension("covariance", p, covariance.nrows()));
    }
    if names.len() != p {
        return Err(Error::dimension("parameter names", p, names.len()));
    }
    if covariance.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite covariance".into()));
    }
    let symmetric = (covariance + covariance.transpose()) * 0.5;
    let eigen = SymmetricEigen::new(symmetric);
    let largest = eigen.eigenvalues.max().max(0.0);
    let smallest = eigen.eigenvalues.min();
    if smallest < -1e-10 * largest.max(1.0) {
        return Err(Error::NotPositiveSemidefinite {
            min_eigenvalue: smallest,
        });
    }
    let roots = eigen.eigenvalues.map(|l| l.max(0.0).sqrt());
    let factor = &eigen.eigenvectors * DMatrix::from_diagonal(&roots);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = DMatrix::zeros(n, p);
    let mut z = DVector::zeros(p);
    for i in 0..n {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let row = center + &factor * &z;
        draws.set_row(i, &row.transpose());
    }
    Ok(BootstrapDraws {
        names,
        center: center.clone(),
        draws,
    })
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 100]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q / 100.0 * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

fn summarize(name: String, estimate: f64, mut values: Vec<f64>) -> Interval {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    values.sort_by(f64::total_cmp);
    Interval {
        name,
        estimate,
        lower: percentile(&values, 2.5),
        upper: percentile(&values, 97.5),
        std_error: var.sqrt(),
    }
}

impl BootstrapDraws {
    pub fn len(&self) -> usize {
        self.draws.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.nrows() == 0
    }

    /// 2.5/97.5 percentile intervals for the parameters themselves.
    pub fn intervals(&self) -> Vec<Interval> {
        (0..self.center.len())
            .map(|i| summarize(self.names[i].clone(), self.center[i], self.draws.column(i).iter().copied().collect()))
            .collect()
    }

    /// Percentile intervals for outputs computed from each parameter draw.
    ///
    /// `outputs` is evaluated at the center for the point estimates and once
    /// per draw.
    pub fn map_outputs<F>(&self, names: &[String], outputs: F) -> Result<Vec<Interval>>
    where
        F: Fn(&DVector<f64>) -> Result<Vec<f64>>,
    {
        let point = outputs(&self.center)?;
        if point.len() != names.len() {
            return Err(Error::dimension("bootstrap outputs", names.len(), point.len()));
        }
        let mut columns = vec![Vec::with_capacity(self.len()); names.len()];
        for row in self.draws.row_iter() {
            let values = outputs(&row.transpose())?;
            if values.len() != names.len() {
                return Err(Error::dimension("bootstrap outputs", names.len(), values.len()));
            }
            for (c, v) in columns.iter_mut().zip(values) {
                c.push(v);
            }
        }
        Ok(names
            .iter()
            .zip(point)
            .zip(columns)
            .map(|((n, p), c)| summarize(n.clone(), p, c))
            .collect())
    }
}
