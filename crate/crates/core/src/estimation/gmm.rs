use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::instruments::{
    build_count_ivs, build_differentiation_ivs, differentiation_labels, independent_columns, InstrumentSet,
};
use crate::dataio::{Dataset, MarketData};
use crate::demand::{invert_shares, DemandParams, InversionOptions, MeanUtilities, TasteDraws};
use crate::error::{Error, Result};

/// Which regressors and instruments enter the linear part of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    /// Characteristics with a mean-utility coefficient.
    pub demand_characteristics: Vec<String>,
    /// Continuous characteristics used for differentiation instruments.
    pub differentiation_characteristics: Vec<String>,
    /// City, month and day-of-week dummies.
    pub fixed_effects: bool,
    pub collinearity_tolerance: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        let ratings: Vec<String> = crate::dataio::RATING_COLUMNS.iter().map(|s| s.to_string()).collect();
        let mut demand = ratings.clone();
        demand.push("airbnb".into());
        let mut differentiation = ratings;
        differentiation.push("beds".into());
        Self {
            demand_characteristics: demand,
            differentiation_characteristics: differentiation,
            fixed_effects: true,
            collinearity_tolerance: 1e-10,
        }
    }
}

/// Grouping for cluster-robust standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterBy {
    /// Nesting group (price-cluster pair and platform).
    #[default]
    Nest,
    Market,
}

/// A GMM weighting matrix with its linear-parameter concentrator.
#[derive(Debug, Clone)]
pub struct Weighting {
    pub matrix: DMatrix<f64>,
    /// `(A' W A)^{-1} A' W` with `A = Z'X`.
    concentrator: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct GmmEvaluation {
    pub objective: f64,
    pub delta: DVector<f64>,
    /// Linear parameters, ordered as [`GmmProblem::regressor_labels`].
    pub theta1: DVector<f64>,
    /// Structural errors `delta - X theta1`.
    pub xi: DVector<f64>,
    /// Sample moments `Z' xi / N`.
    pub moments: DVector<f64>,
}

/// Stacked data for nested GMM with concentrated linear parameters.
pub struct GmmProblem<'a> {
    markets: &'a [MarketData],
    draws: Vec<TasteDraws>,
    offsets: Vec<usize>,
    x: DMatrix<f64>,
    regressor_labels: Vec<String>,
    dropped_regressors: Vec<String>,
    instruments: InstrumentSet,
    nests: Vec<usize>,
    ztx: DMatrix<f64>,
    warm: Vec<Mutex<Option<DVector<f64>>>>,
    inversion: InversionOptions,
}

fn fixed_effect_levels(markets: &[MarketData]) -> Vec<(String, String)> {
    let mut levels: BTreeMap<&'static str, BTreeSet<String>> = BTreeMap::new();
    for m in markets {
        for (cat, level) in m.fixed_effects() {
            levels.entry(cat).or_default().insert(level);
        }
    }
    // the first level of each category is the base
    levels
        .into_iter()
        .flat_map(|(cat, set)| set.into_iter().skip(1).map(move |l| (cat.to_string(), l)))
        .collect()
}

fn fe_dummies(market: &MarketData, levels: &[(String, String)]) -> Vec<f64> {
    let own = market.fixed_effects();
    levels
        .iter()
        .map(|(cat, level)| f64::from(own.iter().any(|(c, l)| c == cat && l == level)))
        .collect()
}

/// Instruments: constant, own characteristics, fixed-effect dummies,
/// same-nest product counts and differentiation instruments.
pub fn build_instruments(dataset: &Dataset, spec: &ModelSpec) -> Result<InstrumentSet> {
    let own: Vec<usize> = spec
        .demand_characteristics
        .iter()
        .map(|c| dataset.column(c))
        .collect::<Result<_>>()?;
    let diff: Vec<usize> = spec
        .differentiation_characteristics
        .iter()
        .map(|c| dataset.column(c))
        .collect::<Result<_>>()?;
    let levels = if spec.fixed_effects {
        fixed_effect_levels(&dataset.markets)
    } else {
        Vec::new()
    };

    let mut labels = vec!["const".to_string()];
    labels.extend(spec.demand_characteristics.iter().cloned());
    labels.extend(levels.iter().map(|(c, l)| format!("{c}={l}")));
    labels.push("nest-count".into());
    labels.extend(differentiation_labels(&spec.differentiation_characteristics));

    let n = dataset.n_products();
    let mut z = DMatrix::zeros(n, labels.len());
    let mut row = 0;
    for m in &dataset.markets {
        let counts = build_count_ivs(&m.nests);
        let diff_ivs = build_differentiation_ivs(&m.characteristics.select_columns(diff.iter()));
        let dummies = fe_dummies(m, &levels);
        for j in 0..m.len() {
            let mut values = vec![1.0];
            values.extend(own.iter().map(|&c| m.characteristics[(j, c)]));
            values.extend(dummies.iter().copied());
            values.push(counts[j]);
            values.extend(diff_ivs.row(j).iter().copied());
            for (c, v) in values.into_iter().enumerate() {
                z[(row, c)] = v;
            }
            row += 1;
        }
    }
    Ok(InstrumentSet::new(z, labels).drop_collinear(spec.collinearity_tolerance))
}

fn build_regressors(dataset: &Dataset, spec: &ModelSpec) -> Result<(DMatrix<f64>, Vec<String>, Vec<String>)> {
    let own: Vec<usize> = spec
        .demand_characteristics
        .iter()
        .map(|c| dataset.column(c))
        .collect::<Result<_>>()?;
    let levels = if spec.fixed_effects {
        fixed_effect_levels(&dataset.markets)
    } else {
        Vec::new()
    };
    let mut labels = vec!["price".to_string(), "const".to_string()];
    labels.extend(spec.demand_characteristics.iter().cloned());
    labels.extend(levels.iter().map(|(c, l)| format!("{c}={l}")));

    let n = dataset.n_products();
    let mut x = DMatrix::zeros(n, labels.len());
    let mut row = 0;
    for m in &dataset.markets {
        let dummies = fe_dummies(m, &levels);
        for j in 0..m.len() {
            let mut values = vec![m.prices[j], 1.0];
            values.extend(own.iter().map(|&c| m.characteristics[(j, c)]));
            values.extend(dummies.iter().copied());
            for (c, v) in values.into_iter().enumerate() {
                x[(row, c)] = v;
            }
            row += 1;
        }
    }
    let keep = independent_columns(&x, spec.collinearity_tolerance);
    if keep.first() != Some(&0) {
        return Err(Error::Validation("price is collinear with nothing or absent".into()));
    }
    let dropped: Vec<String> = (0..labels.len())
        .filter(|i| !keep.contains(i))
        .map(|i| labels[i].clone())
        .collect();
    if !dropped.is_empty() {
        warn!("dropped collinear regressors: {}", dropped.join(", "));
    }
    let kept_labels = keep.iter().map(|&i| labels[i].clone()).collect();
    Ok((x.select_columns(keep.iter()), kept_labels, dropped))
}

fn symmetric_inverse(m: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let inv = m
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Singular(what.to_string()))?;
    Ok((&inv + inv.transpose()) * 0.5)
}

impl<'a> GmmProblem<'a> {
    pub fn new(dataset: &'a Dataset, spec: &ModelSpec, n_draws: usize, seed: u64, inversion: InversionOptions) -> Result<Self> {
        let instruments = build_instruments(dataset, spec)?;
        Self::with_instruments(dataset, spec, instruments, n_draws, seed, inversion)
    }

    /// Same as [`GmmProblem::new`] with a caller-supplied instrument matrix.
    pub fn with_instruments(
        dataset: &'a Dataset,
        spec: &ModelSpec,
        instruments: InstrumentSet,
        n_draws: usize,
        seed: u64,
        inversion: InversionOptions,
    ) -> Result<Self> {
        dataset.validate()?;
        let n = dataset.n_products();
        if n == 0 {
            return Err(Error::Validation("no products to estimate on".into()));
        }
        if instruments.matrix.nrows() != n {
            return Err(Error::dimension("instrument rows", n, instruments.matrix.nrows()));
        }
        let (x, regressor_labels, dropped_regressors) = build_regressors(dataset, spec)?;
        if instruments.ncols() < x.ncols() + 2 {
            return Err(Error::Validation(format!(
                "{} instruments cannot identify {} linear and 2 nonlinear parameters",
                instruments.ncols(),
                x.ncols()
            )));
        }
        let mut offsets = vec![0];
        for m in &dataset.markets {
            offsets.push(offsets.last().copied().unwrap_or(0) + m.len());
        }
        let nests = dataset
            .markets
            .iter()
            .flat_map(|m| m.nests.groups().iter().copied())
            .collect();
        let draws = dataset
            .markets
            .iter()
            .map(|m| TasteDraws::for_market(n_draws, seed, &m.market_id))
            .collect();
        let ztx = instruments.matrix.transpose() * &x;
        Ok(Self {
            markets: &dataset.markets,
            draws,
            offsets,
            x,
            regressor_labels,
            dropped_regressors,
            instruments,
            nests,
            ztx,
            warm: dataset.markets.iter().map(|_| Mutex::new(None)).collect(),
            inversion,
        })
    }

    pub fn n_observations(&self) -> usize {
        self.x.nrows()
    }

    pub fn regressor_labels(&self) -> &[String] {
        &self.regressor_labels
    }

    pub fn dropped_regressors(&self) -> &[String] {
        &self.dropped_regressors
    }

    pub fn instruments(&self) -> &InstrumentSet {
        &self.instruments
    }

    pub fn draws(&self, market: usize) -> &TasteDraws {
        &self.draws[market]
    }

    /// Builds the concentrator for an arbitrary weighting matrix.
    pub fn weighting(&self, matrix: DMatrix<f64>) -> Result<Weighting> {
        let l = self.instruments.ncols();
        if matrix.shape() != (l, l) {
            return Err(Error::dimension("weighting matrix", l, matrix.nrows()));
        }
        let atw = self.ztx.transpose() * &matrix;
        let normal = &atw * &self.ztx;
        let concentrator = normal
            .lu()
            .solve(&atw)
            .ok_or_else(|| Error::Singular("concentrated least-squares normal equations".into()))?;
        Ok(Weighting { matrix, concentrator })
    }

    /// `W = (Z'Z / N)^{-1}`, which makes the concentration step 2SLS.
    pub fn first_step_weighting(&self) -> Result<Weighting> {
        let z = &self.instruments.matrix;
        let n = self.n_observations() as f64;
        self.weighting(symmetric_inverse(z.transpose() * z / n, "instrument cross-product")?)
    }

    /// Inverse of the heteroskedasticity-robust moment covariance at `xi`.
    pub fn optimal_weighting(&self, xi: &DVector<f64>) -> Result<Weighting> {
        let z = &self.instruments.matrix;
        let n = self.n_observations() as f64;
        let mut s = DMatrix::zeros(z.ncols(), z.ncols());
        for (i, row) in z.row_iter().enumerate() {
            s.ger(xi[i] * xi[i] / n, &row.transpose(), &row.transpose(), 1.0);
        }
        self.weighting(symmetric_inverse(s, "moment covariance")?)
    }

    /// Mean utilities rationalizing observed shares at `theta2 = (sigma, rho)`.
    pub fn mean_utilities(&self, theta2: [f64; 2]) -> Result<DVector<f64>> {
        let params = DemandParams::new(0.0, theta2[0], theta2[1])?;
        let solved: Vec<Result<DVector<f64>>> = self
            .markets
            .par_iter()
            .enumerate()
            .map(|(i, m)| {
                let mut warm = self.warm[i].lock().unwrap_or_else(|e| e.into_inner());
                let start = warm.as_ref().map(|d| MeanUtilities(d.clone()));
                let out = invert_shares(
                    &m.shares(),
                    &params,
                    &m.nests,
                    &self.draws[i],
                    &m.prices,
                    start.as_ref(),
                    &self.inversion,
                )
                .map_err(|e| e.in_market(&m.market_id, "share inversion"))?;
                *warm = Some(out.delta.0.clone());
                Ok(out.delta.0)
            })
            .collect();
        let mut delta = DVector::zeros(self.n_observations());
        for (i, d) in solved.into_iter().enumerate() {
            let d = d?;
            delta.rows_mut(self.offsets[i], d.len()).copy_from(&d);
        }
        Ok(delta)
    }

    /// Concentrates out the linear parameters for a given `delta`.
    pub fn evaluate_delta(&self, delta: DVector<f64>, weighting: &Weighting) -> GmmEvaluation {
        let z = &self.instruments.matrix;
        let ztd = z.transpose() * &delta;
        let theta1 = &weighting.concentrator * &ztd;
        let xi = &delta - &self.x * &theta1;
        let moments = (ztd - &self.ztx * &theta1) / self.n_observations() as f64;
        let objective = moments.dot(&(&weighting.matrix * &moments)).max(0.0);
        GmmEvaluation {
            objective,
            delta,
            theta1,
            xi,
            moments,
        }
    }

    pub fn evaluate(&self, theta2: [f64; 2], weighting: &Weighting) -> Result<GmmEvaluation> {
        let delta = self.mean_utilities(theta2)?;
        Ok(self.evaluate_delta(delta, weighting))
    }

    /// `g' W g` at `theta2`.
    pub fn objective(&self, theta2: [f64; 2], weighting: &Weighting) -> Result<f64> {
        let value = self.evaluate(theta2, weighting)?.objective;
        debug!("objective at sigma={:.6} rho={:.6}: {value:.6e}", theta2[0], theta2[1]);
        Ok(value)
    }

    /// Cluster-robust sandwich covariance of `(sigma, rho, theta1)`.
    ///
    /// Derivatives of `delta` in `theta2` are central differences except at
    /// the edges of `rho`'s domain; entries of `fixed` mark nonlinear
    /// parameters held fixed, whose rows and columns are zero.
    pub fn covariance(
        &self,
        theta2: [f64; 2],
        eval: &GmmEvaluation,
        weighting: &Weighting,
        cluster_by: ClusterBy,
        fixed: [bool; 2],
    ) -> Result<DMatrix<f64>> {
        let n = self.n_observations() as f64;
        let z = &self.instruments.matrix;
        let l = z.ncols();
        let k = self.x.ncols();
        let free: Vec<usize> = (0..2).filter(|&i| !fixed[i]).collect();
        let p = free.len() + k;

        let mut g = DMatrix::zeros(l, p);
        for (col, &i) in free.iter().enumerate() {
            let h = 1e-5;
            let (lo, hi) = if i == 1 && theta2[1] - h < 0.0 {
                (theta2[1], theta2[1] + h)
            } else if i == 1 && theta2[1] + h >= 1.0 {
                (theta2[1] - h, theta2[1])
            } else {
                (theta2[i] - h, theta2[i] + h)
            };
            let mut up = theta2;
            up[i] = hi;
            let mut down = theta2;
            down[i] = lo;
            let d_delta = (self.mean_utilities(up)? - self.mean_utilities(down)?) / (hi - lo);
            g.set_column(col, &(z.transpose() * d_delta / n));
        }
        g.view_mut((0, free.len()), (l, k)).copy_from(&(-&self.ztx / n));

        let mut scores: BTreeMap<usize, DVector<f64>> = BTreeMap::new();
        let mut market = 0;
        for (i, row) in z.row_iter().enumerate() {
            while i >= self.offsets[market + 1] {
                market += 1;
            }
            let key = match cluster_by {
                ClusterBy::Nest => self.nests[i],
                ClusterBy::Market => market,
            };
            let entry = scores.entry(key).or_insert_with(|| DVector::zeros(l));
            entry.axpy(eval.xi[i], &row.transpose(), 1.0);
        }
        let c = scores.len() as f64;
        if c < 2.0 {
            return Err(Error::Validation("cluster-robust covariance needs at least two clusters".into()));
        }
        let mut s = DMatrix::zeros(l, l);
        for u in scores.values() {
            s.ger(1.0 / n, u, u, 1.0);
        }
        s *= c / (c - 1.0);

        let w = &weighting.matrix;
        let gtw = g.transpose() * w;
        let bread = (&gtw * &g)
            .try_inverse()
            .ok_or_else(|| Error::Singular("GMM information matrix".into()))?;
        let meat = &gtw * &s * gtw.transpose();
        let v = &bread * meat * bread.transpose() / n;
        let v = (&v + v.transpose()) * 0.5;

        let mut full = DMatrix::zeros(2 + k, 2 + k);
        let index: Vec<usize> = free.iter().copied().chain(2..2 + k).collect();
        for (a, &ia) in index.iter().enumerate() {
            for (b, &ib) in index.iter().enumerate() {
                full[(ia, ib)] = v[(a, b)];
            }
        }
        Ok(full)
    }
}

pub(crate) fn is_inversion_failure(err: &Error) -> bool {
    match err {
        Error::InversionFailure { .. } | Error::NumericalOverflow(_) => true,
        Error::Market { source, .. } => is_inversion_failure(source),
        _ => false,
    }
}
