//! Supply side: conduct, marginal-cost recovery and price equilibria.
//!
//! Jacobians use the convention `jacobian[(j, k)] = dq_j / dp_k`; the
//! first-order condition of row `j` therefore reads off column `j`.

mod conduct;
mod costs;
mod equilibrium;
mod profits;

use nalgebra::{DMatrix, DVector};

pub use conduct::{build_conduct, ConductSpec, Platform, Scenario, SpGrouping, COMMISSION_RATE};
pub use costs::{recover_marginal_costs, MarginalCosts};
pub use equilibrium::{solve_equilibrium, EquilibriumOptions, EquilibriumResult, SolverPath};
pub(crate) use profits::profits_at;
pub use profits::{commission_revenue, firm_profits, platform_commission};

/// `q_j + sum_k ownership[j,k] (p_k - costs[j,k]) dq_k/dp_j` for every row.
pub fn foc_residual(
    prices: &DVector<f64>,
    quantities: &DVector<f64>,
    jacobian: &DMatrix<f64>,
    conduct: &ConductSpec,
    costs: &DMatrix<f64>,
) -> DVector<f64> {
    let n = prices.len();
    DVector::from_fn(n, |j, _| {
        let mut value = quantities[j];
        for k in 0..n {
            let owned = conduct.ownership[(j, k)];
            if owned != 0.0 {
                value += owned * (prices[k] - costs[(j, k)]) * jacobian[(k, j)];
            }
        }
        value
    })
}
