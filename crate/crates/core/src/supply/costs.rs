use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::conduct::{ConductSpec, Scenario};
use super::foc_residual;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginalCosts {
    /// Recovered costs; zero for smart-pricing listings.
    pub mc: DVector<f64>,
    /// First-order-condition residual per row at the observed prices, in
    /// quantity units.
    pub foc_residuals: DVector<f64>,
    pub condition_number: f64,
}

/// Backs marginal costs out of baseline first-order conditions,
/// `mc = p - (Delta D)^{-1} q` with `Delta D = -(ownership ∘ (dq/dp)')`.
///
/// `jacobian[(j, k)]` is `dq_j / dp_k`.
pub fn recover_marginal_costs(
    prices: &DVector<f64>,
    quantities: &DVector<f64>,
    jacobian: &DMatrix<f64>,
    conduct: &ConductSpec,
) -> Result<MarginalCosts> {
    let n = prices.len();
    if quantities.len() != n {
        return Err(Error::dimension("quantities", n, quantities.len()));
    }
    if jacobian.nrows() != n || jacobian.ncols() != n {
        return Err(Error::dimension("jacobian", n, jacobian.nrows()));
    }
    if conduct.len() != n {
        return Err(Error::dimension("conduct", n, conduct.len()));
    }
    if conduct.scenario != Scenario::Baseline {
        return Err(Error::Validation(
            "marginal costs are recovered under baseline conduct only".into(),
        ));
    }

    let delta_d = -conduct.ownership.component_mul(&jacobian.transpose());
    let singular = delta_d.clone().svd(false, false).singular_values;
    let largest = singular.max();
    let smallest = singular.min();
    let condition_number = if smallest > 0.0 { largest / smallest } else { f64::INFINITY };
    if !(smallest > largest * 1e-14) {
        return Err(Error::Singular(format!(
            "markup matrix (condition number {condition_number:e})"
        )));
    }
    debug!("markup matrix condition number {condition_number:.3e}");

    let markups = delta_d
        .lu()
        .solve(quantities)
        .ok_or_else(|| Error::Singular("markup matrix".into()))?;
    let mut mc = prices - markups;
    for j in 0..n {
        if conduct.sp[j] {
            mc[j] = 0.0;
        }
    }
    if mc.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numerical("non-finite marginal cost".into()));
    }
    let negative = mc.iter().filter(|&&c| c < 0.0).count();
    if negative > 0 {
        debug!("{negative} recovered marginal costs are negative");
    }

    let costs = conduct.effective_costs(&mc);
    let foc_residuals = foc_residual(prices, quantities, jacobian, conduct, &costs);
    Ok(MarginalCosts {
        mc,
        foc_residuals,
        condition_number,
    })
}
