//! Nested GMM estimation of the demand model.
//!
//! The outer loop searches over `(sigma, rho)`; for each candidate the
//! shares are inverted market by market and the linear parameters (price
//! coefficient, characteristics, fixed effects) are concentrated out by
//! linear IV.

mod bootstrap;
mod gmm;
mod instruments;
mod optimizer;

use std::collections::BTreeMap;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use bootstrap::{percentile, sample_normal, BootstrapDraws, Interval, BOOTSTRAP_DRAWS};
pub use gmm::{build_instruments, ClusterBy, GmmEvaluation, GmmProblem, ModelSpec, Weighting};
pub use instruments::{
    build_count_ivs, build_differentiation_ivs, differentiation_labels, independent_columns, InstrumentSet,
};
pub use optimizer::{nelder_mead, NelderMeadOptions, NelderMeadOutcome};

use crate::dataio::Dataset;
use crate::demand::{DemandParams, InversionOptions, DEFAULT_DRAWS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationConfig {
    pub n_draws: usize,
    pub seed: u64,
    /// Bounds on the random price coefficient's scale. Equal bounds fix it
    /// (nested logit when both are zero).
    pub sigma_bounds: [f64; 2],
    pub rho_bounds: [f64; 2],
    /// Starting points `(sigma, rho)` of the first-step search.
    pub starts: Vec<[f64; 2]>,
    /// Re-estimate with the efficient weighting matrix after the first step.
    pub two_step: bool,
    pub cluster_by: ClusterBy,
    #[serde(flatten)]
    pub model: ModelSpec,
    pub bootstrap_draws: usize,
    #[serde(skip)]
    pub inversion: InversionOptions,
    #[serde(skip)]
    pub optimizer: NelderMeadOptions,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            n_draws: DEFAULT_DRAWS,
            seed: 0,
            sigma_bounds: [-5.0, 0.0],
            rho_bounds: [0.0, 0.99],
            starts: vec![[-0.1, 0.1], [-0.5, 0.4], [-1.0, 0.7]],
            two_step: true,
            cluster_by: ClusterBy::Nest,
            model: ModelSpec::default(),
            bootstrap_draws: BOOTSTRAP_DRAWS,
            inversion: InversionOptions::default(),
            optimizer: NelderMeadOptions::default(),
        }
    }
}

impl EstimationConfig {
    /// Nested logit: the random coefficient is fixed at zero.
    pub fn nested_logit(mut self) -> Self {
        self.sigma_bounds = [0.0, 0.0];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let [slo, shi] = self.sigma_bounds;
        let [rlo, rhi] = self.rho_bounds;
        if !(slo <= shi) || !slo.is_finite() || !shi.is_finite() {
            return Err(Error::Config(format!("invalid sigma bounds {:?}", self.sigma_bounds)));
        }
        if !(0.0 <= rlo && rlo <= rhi && rhi < 1.0) {
            return Err(Error::Config(format!("rho bounds {:?} must lie in [0, 1)", self.rho_bounds)));
        }
        if self.starts.is_empty() {
            return Err(Error::Config("at least one starting point is required".into()));
        }
        if self.n_draws == 0 {
            return Err(Error::Config("n_draws must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of one local search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchDiagnostics {
    pub step: usize,
    pub start: [f64; 2],
    pub theta2: [f64; 2],
    pub objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub params: DemandParams,
    /// Names of `estimates`: `sigma`, `rho`, then the linear parameters
    /// starting with `price`.
    pub parameter_names: Vec<String>,
    pub estimates: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub standard_errors: DVector<f64>,
    pub objective: f64,
    pub n_observations: usize,
    pub n_markets: usize,
    pub instruments: Vec<String>,
    pub dropped_instruments: Vec<String>,
    pub dropped_regressors: Vec<String>,
    /// Whether the reported step used the efficient weighting matrix.
    pub efficient_weighting: bool,
    pub searches: Vec<SearchDiagnostics>,
    pub config: EstimationConfig,
}

impl EstimationResult {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.parameter_names.iter().position(|n| n == name)
    }

    pub fn standard_error(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.standard_errors[i])
    }

    /// Demand primitives implied by a full parameter vector ordered as
    /// `estimates`. `rho` is clamped into `[0, 0.999]`.
    pub fn params_from(&self, theta: &DVector<f64>) -> Result<DemandParams> {
        params_from_vector(&self.parameter_names, theta)
    }

    /// Parametric bootstrap over the full parameter vector.
    pub fn bootstrap(&self, n: usize, seed: u64) -> Result<BootstrapDraws> {
        parametric_bootstrap(self, n, seed)
    }
}

/// Draws `n` parameter vectors from `N(estimates, covariance)`.
pub fn parametric_bootstrap(result: &EstimationResult, n: usize, seed: u64) -> Result<BootstrapDraws> {
    sample_normal(result.parameter_names.clone(), &result.estimates, &result.covariance, n, seed)
}

fn params_from_vector(names: &[String], theta: &DVector<f64>) -> Result<DemandParams> {
    let get = |name: &str| names.iter().position(|n| n == name).map(|i| theta[i]);
    let mut params = DemandParams::new(
        get("price").unwrap_or(f64::NAN),
        get("sigma").unwrap_or(0.0),
        get("rho").unwrap_or(0.0).clamp(0.0, 0.999),
    )?;
    let mut fe = BTreeMap::new();
    for (i, name) in names.iter().enumerate().skip(2) {
        if name == "price" {
            continue;
        }
        if name.contains('=') {
            fe.insert(name.clone(), theta[i]);
        } else {
            params.beta.push(theta[i]);
        }
    }
    params.fe = fe;
    Ok(params)
}

struct Search {
    theta2: [f64; 2],
    eval: GmmEvaluation,
}

fn search(
    problem: &GmmProblem<'_>,
    weighting: &Weighting,
    starts: &[[f64; 2]],
    config: &EstimationConfig,
    step: usize,
    diagnostics: &mut Vec<SearchDiagnostics>,
) -> Result<Search> {
    let lower = [config.sigma_bounds[0], config.rho_bounds[0]];
    let upper = [config.sigma_bounds[1], config.rho_bounds[1]];
    let free: Vec<usize> = (0..2).filter(|&i| lower[i] < upper[i]).collect();
    let full = |x: &[f64], start: &[f64; 2]| {
        let mut theta = *start;
        for (k, &i) in free.iter().enumerate() {
            theta[i] = x[k];
        }
        for i in 0..2 {
            theta[i] = theta[i].clamp(lower[i], upper[i]);
        }
        theta
    };

    let mut best: Option<([f64; 2], f64)> = None;
    let mut trace = Vec::new();
    let mut converged_points: Vec<[f64; 2]> = Vec::new();
    for start in starts {
        let objective = |x: &[f64]| match problem.objective(full(x, start), weighting) {
            Ok(v) => Ok(v),
            Err(e) if gmm::is_inversion_failure(&e) => {
                warn!("inversion failed during search ({e}); treating the point as infeasible");
                Ok(f64::INFINITY)
            }
            Err(e) => Err(e),
        };
        let x0: Vec<f64> = free.iter().map(|&i| start[i]).collect();
        let lo: Vec<f64> = free.iter().map(|&i| lower[i]).collect();
        let hi: Vec<f64> = free.iter().map(|&i| upper[i]).collect();
        let (theta2, value, outcome) = if free.is_empty() {
            let theta = full(&[], start);
            (theta, objective(&[])?, None)
        } else {
            let out = nelder_mead(objective, &x0, &lo, &hi, &config.optimizer)?;
            (full(&out.x, start), out.value, Some(out))
        };
        let converged = outcome.as_ref().is_none_or(|o| o.converged) && value.is_finite();
        info!(
            "step {step} start {start:?}: sigma={:.6} rho={:.6} objective={value:.6e} converged={converged}",
            theta2[0], theta2[1]
        );
        if let Some(o) = &outcome {
            trace.extend(o.trace.iter().copied());
        }
        diagnostics.push(SearchDiagnostics {
            step,
            start: *start,
            theta2,
            objective: value,
            iterations: outcome.as_ref().map_or(0, |o| o.iterations),
            evaluations: outcome.as_ref().map_or(1, |o| o.evaluations),
            converged,
        });
        if converged {
            converged_points.push(theta2);
            if best.is_none_or(|(_, v)| value < v) {
                best = Some((theta2, value));
            }
        }
    }
    let Some((theta2, _)) = best else {
        return Err(Error::OptimizerFailure {
            message: format!("no start converged in step {step}"),
            trace,
        });
    };
    if converged_points
        .iter()
        .any(|p| (p[0] - theta2[0]).abs() > 1e-3 || (p[1] - theta2[1]).abs() > 1e-3)
    {
        warn!("step {step}: starting points reached different local minima; keeping the lowest");
    }
    let eval = problem.evaluate(theta2, weighting)?;
    Ok(Search { theta2, eval })
}

/// Two-step GMM estimate of the demand parameters.
pub fn estimate(dataset: &Dataset, config: &EstimationConfig) -> Result<EstimationResult> {
    config.validate()?;
    let problem = GmmProblem::new(dataset, &config.model, config.n_draws, config.seed, config.inversion)?;
    info!(
        "estimating on {} products in {} markets with {} instruments",
        problem.n_observations(),
        dataset.markets.len(),
        problem.instruments().ncols()
    );
    let mut searches = Vec::new();
    let first = problem.first_step_weighting()?;
    let step1 = search(&problem, &first, &config.starts, config, 1, &mut searches)?;

    let (weighting, result, efficient) = if config.two_step {
        match problem.optimal_weighting(&step1.eval.xi) {
            Ok(w) => {
                let step2 = search(&problem, &w, &[step1.theta2], config, 2, &mut searches)?;
                (w, step2, true)
            }
            Err(e) => {
                warn!("efficient weighting unavailable ({e}); reporting first-step estimates");
                (first, step1, false)
            }
        }
    } else {
        (first, step1, false)
    };

    let fixed = [
        config.sigma_bounds[0] == config.sigma_bounds[1],
        config.rho_bounds[0] == config.rho_bounds[1],
    ];
    let covariance = problem.covariance(result.theta2, &result.eval, &weighting, config.cluster_by, fixed)?;
    let standard_errors = covariance.diagonal().map(|v| v.max(0.0).sqrt());

    let mut parameter_names = vec!["sigma".to_string(), "rho".to_string()];
    parameter_names.extend(problem.regressor_labels().iter().cloned());
    let mut estimates = DVector::zeros(parameter_names.len());
    estimates[0] = result.theta2[0];
    estimates[1] = result.theta2[1];
    estimates.rows_mut(2, result.eval.theta1.len()).copy_from(&result.eval.theta1);
    let params = params_from_vector(&parameter_names, &estimates)?;

    Ok(EstimationResult {
        params,
        parameter_names,
        estimates,
        covariance,
        standard_errors,
        objective: result.eval.objective,
        n_observations: problem.n_observations(),
        n_markets: dataset.markets.len(),
        instruments: problem.instruments().labels.clone(),
        dropped_instruments: problem.instruments().dropped.clone(),
        dropped_regressors: problem.dropped_regressors().to_vec(),
        efficient_weighting: efficient,
        searches,
        config: config.clone(),
    })
}
