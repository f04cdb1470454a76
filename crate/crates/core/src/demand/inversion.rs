use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::kernel::DrawKernel;
use super::{DemandParams, MeanUtilities, NestStructure, TasteDraws};
use crate::error::{Error, Result};

/// Stopping rule for the share-inversion contraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionOptions {
    /// Sup-norm tolerance on `ln s_obs - ln s(delta)`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for InversionOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-13,
            max_iterations: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InversionResult {
    pub delta: MeanUtilities,
    pub iterations: usize,
    pub residual: f64,
}

/// Recovers the mean utilities that rationalize `observed_shares`.
///
/// Iterates `delta <- delta + (1 - rho) (ln s_obs - ln s(delta))`, starting
/// from `start` when given and from the plain-logit inversion otherwise.
pub fn invert_shares(
    observed_shares: &DVector<f64>,
    params: &DemandParams,
    nests: &NestStructure,
    draws: &TasteDraws,
    prices: &DVector<f64>,
    start: Option<&MeanUtilities>,
    options: &InversionOptions,
) -> Result<InversionResult> {
    let n = observed_shares.len();
    if prices.len() != n {
        return Err(Error::dimension("prices", n, prices.len()));
    }
    if nests.len() != n {
        return Err(Error::dimension("nest assignment", n, nests.len()));
    }
    params.validate()?;
    if draws.is_empty() {
        return Err(Error::InvalidParameter("no taste draws".into()));
    }
    if observed_shares.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidParameter(
            "observed shares must be strictly positive".into(),
        ));
    }
    let inside: f64 = observed_shares.sum();
    if !(inside < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "inside shares sum to {inside}, which leaves no outside good"
        )));
    }

    let log_observed = observed_shares.map(f64::ln);
    let mut delta = match start {
        Some(s) if s.len() == n && s.0.iter().all(|d| d.is_finite()) => s.0.clone(),
        _ => log_observed.add_scalar(-(1.0 - inside).ln()),
    };

    let step = 1.0 - params.rho;
    let weight = draws.weight();
    let mut kernel = DrawKernel::new(nests, params.rho);
    let mut predicted = DVector::zeros(n);
    let mut residual = f64::INFINITY;

    for iteration in 0..=options.max_iterations {
        predicted.fill(0.0);
        for &v in draws.values() {
            kernel.evaluate(&delta, prices, params.sigma * v);
            for (acc, s) in predicted.iter_mut().zip(&kernel.shares) {
                *acc += weight * s;
            }
        }

        residual = 0.0;
        let mut finite = true;
        for j in 0..n {
            let gap = log_observed[j] - predicted[j].ln();
            finite &= gap.is_finite();
            residual = residual.max(gap.abs());
            predicted[j] = gap;
        }
        if !finite {
            return Err(Error::NumericalOverflow("share inversion"));
        }
        if residual < options.tolerance {
            return Ok(InversionResult {
                delta: MeanUtilities(delta),
                iterations: iteration,
                residual,
            });
        }
        if iteration == options.max_iterations {
            break;
        }
        delta.axpy(step, &predicted, 1.0);
    }

    Err(Error::InversionFailure {
        iterations: options.max_iterations,
        residual,
    })
}
