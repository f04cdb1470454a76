use std::collections::BTreeMap;

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::conduct::{ConductSpec, Platform, Scenario};
use super::profits::{platform_commission, profits_at};
use crate::demand::{price_derivative_parts, DemandContext, MeanUtilities, PriceDerivativeParts};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EquilibriumOptions {
    /// Sup-norm tolerance on the first-order residual in share units.
    pub tolerance: f64,
    /// Iteration budget shared by the fixed point and the Newton fallback.
    pub max_iterations: usize,
    /// Step factor applied when a full fixed-point step raises the residual.
    pub damping: f64,
    /// Relative price change below which the fixed point counts as stalled.
    pub stall_tolerance: f64,
    /// Fixed-point iterations without a new best residual before falling
    /// back to Newton.
    pub oscillation_window: usize,
    pub max_halvings: usize,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iterations: 5_000,
            damping: 0.5,
            stall_tolerance: 1e-15,
            oscillation_window: 100,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverPath {
    FixedPoint,
    Newton,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub scenario: Scenario,
    pub prices: DVector<f64>,
    pub shares: DVector<f64>,
    pub quantities: DVector<f64>,
    /// Mean utilities at the equilibrium prices.
    pub delta: DVector<f64>,
    pub mc: DVector<f64>,
    /// `p_j - C[j,j]`, the margin each row's own FOC prices over.
    pub margins: DVector<f64>,
    pub profits: BTreeMap<String, f64>,
    pub commission: f64,
    pub platforms: Vec<Platform>,
    pub tau: f64,
    /// Sup-norm of the first-order residual in share units.
    pub foc_residual: f64,
    pub iterations: usize,
    pub path: SolverPath,
}

struct Evaluation {
    parts: PriceDerivativeParts,
    residual: DVector<f64>,
    target: DVector<f64>,
    norm: f64,
}

struct PricingProblem<'a> {
    demand: &'a DemandContext,
    delta: &'a MeanUtilities,
    conduct: &'a ConductSpec,
    costs: DMatrix<f64>,
}

impl PricingProblem<'_> {
    fn evaluate(&self, prices: &DVector<f64>) -> Result<Evaluation> {
        let n = prices.len();
        let delta = self.demand.reprice(self.delta, prices);
        let parts = price_derivative_parts(
            &delta,
            prices,
            &self.demand.params,
            &self.demand.nests,
            &self.demand.draws,
            1.0,
        )?;
        let ownership = &self.conduct.ownership;

        let mut residual = DVector::zeros(n);
        let mut target = DVector::zeros(n);
        for j in 0..n {
            // sum_k O[j,k] (p_k - C[j,k]) gamma[k,j]
            let mut cross = 0.0;
            for k in 0..n {
                let owned = ownership[(j, k)];
                if owned != 0.0 {
                    cross += owned * (prices[k] - self.costs[(j, k)]) * parts.gamma[(k, j)];
                }
            }
            let lambda = parts.lambda[j];
            let own_margin = prices[j] - self.costs[(j, j)];
            residual[j] = parts.shares[j] + own_margin * lambda - cross;
            target[j] = self.costs[(j, j)] + (cross - parts.shares[j]) / lambda;
        }
        let norm = residual.amax();
        if !norm.is_finite() {
            return Err(Error::Numerical("non-finite first-order residual".into()));
        }
        Ok(Evaluation {
            parts,
            residual,
            target,
            norm,
        })
    }
}

fn clamp_nonnegative(p: DVector<f64>) -> DVector<f64> {
    p.map(|x| x.max(0.0))
}

/// Solves the pricing game described by `conduct`.
///
/// `delta` holds mean utilities at `demand.prices`; utilities at other prices
/// move by `alpha` per unit of price. The primary method is the markup
/// fixed point `p <- C_diag + lambda^{-1} (cross - s)`, with damping when a
/// full step raises the residual, and a damped Newton iteration on the
/// stacked first-order residual when the fixed point stalls or oscillates.
pub fn solve_equilibrium(
    mc: &DVector<f64>,
    conduct: &ConductSpec,
    demand: &DemandContext,
    delta: &MeanUtilities,
    start: Option<&DVector<f64>>,
    options: &EquilibriumOptions,
) -> Result<EquilibriumResult> {
    let n = demand.prices.len();
    if mc.len() != n {
        return Err(Error::dimension("marginal costs", n, mc.len()));
    }
    if conduct.len() != n {
        return Err(Error::dimension("conduct", n, conduct.len()));
    }
    if delta.len() != n {
        return Err(Error::dimension("mean utilities", n, delta.len()));
    }
    if mc.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidParameter("non-finite marginal cost".into()));
    }
    if (0..n).any(|j| conduct.ownership[(j, j)] != 1.0) {
        return Err(Error::Validation("ownership diagonal must be one".into()));
    }

    let problem = PricingProblem {
        demand,
        delta,
        conduct,
        costs: conduct.effective_costs(mc),
    };
    let mut prices = clamp_nonnegative(start.cloned().unwrap_or_else(|| demand.prices.clone()));
    let mut eval = problem.evaluate(&prices)?;
    let mut trace = vec![eval.norm];
    let mut iterations = 0usize;

    // markup fixed point
    let mut best = (eval.norm, prices.clone());
    let mut since_best = 0usize;
    let mut path = SolverPath::FixedPoint;
    while eval.norm >= options.tolerance {
        if iterations >= options.max_iterations {
            return Err(non_convergence(iterations, eval.norm, trace));
        }
        iterations += 1;

        let direction = &eval.target - &prices;
        if direction.iter().any(|d| !d.is_finite()) {
            debug!("fixed point produced a non-finite step; switching to Newton");
            path = SolverPath::Newton;
            break;
        }
        let mut candidate = clamp_nonnegative(&prices + &direction);
        let mut next = problem.evaluate(&candidate)?;
        if next.norm > eval.norm {
            candidate = clamp_nonnegative(&prices + &direction * options.damping);
            next = problem.evaluate(&candidate)?;
        }
        let change = (&candidate - &prices)
            .iter()
            .zip(prices.iter())
            .map(|(d, p)| d.abs() / p.abs().max(1.0))
            .fold(0.0, f64::max);
        prices = candidate;
        eval = next;
        trace.push(eval.norm);

        if eval.norm < best.0 {
            best = (eval.norm, prices.clone());
            since_best = 0;
        } else {
            since_best += 1;
        }
        if eval.norm >= options.tolerance
            && (change < options.stall_tolerance || since_best >= options.oscillation_window)
        {
            debug!(
                "fixed point stalled at residual {:.3e} after {iterations} iterations; switching to Newton",
                eval.norm
            );
            path = SolverPath::Newton;
            break;
        }
    }

    if path == SolverPath::Newton {
        prices = best.1;
        eval = problem.evaluate(&prices)?;
        while eval.norm >= options.tolerance {
            if iterations >= options.max_iterations {
                return Err(non_convergence(iterations, eval.norm, trace));
            }
            iterations += 1;
            let jac = residual_jacobian(&problem, &prices)?;
            let step = jac
                .lu()
                .solve(&(-&eval.residual))
                .ok_or_else(|| Error::Singular("first-order residual jacobian".into()))?;
            let mut scale = 1.0;
            let mut accepted = None;
            for _ in 0..=options.max_halvings {
                let candidate = clamp_nonnegative(&prices + &step * scale);
                let next = problem.evaluate(&candidate)?;
                if next.norm < eval.norm {
                    accepted = Some((candidate, next));
                    break;
                }
                scale *= 0.5;
            }
            match accepted {
                Some((p, e)) => {
                    prices = p;
                    eval = e;
                    trace.push(eval.norm);
                }
                None => return Err(non_convergence(iterations, eval.norm, trace)),
            }
        }
    }

    Ok(finish(problem, prices, eval, mc, iterations, path))
}

fn residual_jacobian(problem: &PricingProblem<'_>, prices: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = prices.len();
    let mut jac = DMatrix::zeros(n, n);
    for k in 0..n {
        let h = 1e-6 * prices[k].abs().max(1.0);
        let mut up = prices.clone();
        up[k] += h;
        let mut down = prices.clone();
        let width = if prices[k] - h >= 0.0 {
            down[k] -= h;
            2.0 * h
        } else {
            h
        };
        let diff = problem.evaluate(&up)?.residual - problem.evaluate(&down)?.residual;
        jac.set_column(k, &(diff / width));
    }
    Ok(jac)
}

fn non_convergence(iterations: usize, residual: f64, trace: Vec<f64>) -> Error {
    let keep = trace.len().saturating_sub(100);
    Error::NonConvergence {
        iterations,
        residual,
        trace: trace[keep..].to_vec(),
    }
}

fn finish(
    problem: PricingProblem<'_>,
    prices: DVector<f64>,
    eval: Evaluation,
    mc: &DVector<f64>,
    iterations: usize,
    path: SolverPath,
) -> EquilibriumResult {
    let conduct = problem.conduct;
    let market_size = problem.demand.market_size;
    let shares = eval.parts.shares.clone();
    let quantities = &shares * market_size;
    let margins = DVector::from_fn(prices.len(), |j, _| prices[j] - problem.costs[(j, j)]);
    let profits = profits_at(&prices, &quantities, mc, conduct);
    let commission = platform_commission(&prices, &quantities, &conduct.platforms, conduct.tau);
    let delta = problem.demand.reprice(problem.delta, &prices).0;
    EquilibriumResult {
        scenario: conduct.scenario,
        prices,
        shares,
        quantities,
        delta,
        mc: mc.clone(),
        margins,
        profits,
        commission,
        platforms: conduct.platforms.clone(),
        tau: conduct.tau,
        foc_residual: eval.norm,
        iterations,
        path,
    }
}
