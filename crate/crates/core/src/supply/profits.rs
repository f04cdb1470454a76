use std::collections::BTreeMap;

use nalgebra::DVector;

use super::conduct::{ConductSpec, Platform};
use super::equilibrium::EquilibriumResult;

/// Profit of every firm, `sum_j (p_j - 1(j) mc_j) q_j` with `1(j) = 0` for
/// smart-pricing listings.
pub fn firm_profits(result: &EquilibriumResult, conduct: &ConductSpec) -> BTreeMap<String, f64> {
    profits_at(&result.prices, &result.quantities, &result.mc, conduct)
}

pub(crate) fn profits_at(
    prices: &DVector<f64>,
    quantities: &DVector<f64>,
    mc: &DVector<f64>,
    conduct: &ConductSpec,
) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for j in 0..prices.len() {
        let margin = prices[j] - conduct.cost_indicator(j) * mc[j];
        *out.entry(conduct.firms[j].clone()).or_insert(0.0) += margin * quantities[j];
    }
    out
}

/// `tau * sum over Airbnb listings of p q`.
pub fn platform_commission(
    prices: &DVector<f64>,
    quantities: &DVector<f64>,
    platforms: &[Platform],
    tau: f64,
) -> f64 {
    let revenue: f64 = platforms
        .iter()
        .enumerate()
        .filter(|(_, p)| **p == Platform::Airbnb)
        .map(|(j, _)| prices[j] * quantities[j])
        .sum();
    tau * revenue
}

/// Platform commission revenue at an equilibrium.
pub fn commission_revenue(result: &EquilibriumResult) -> f64 {
    platform_commission(&result.prices, &result.quantities, &result.platforms, result.tau)
}
