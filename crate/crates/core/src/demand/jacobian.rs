use nalgebra::{DMatrix, DVector};

use super::kernel::DrawKernel;
use super::{check_lengths, DemandParams, MeanUtilities, NestStructure, TasteDraws};
use crate::error::{Error, Result};

/// Decomposition `dq/dp = diag(lambda) - gamma` of the demand Jacobian.
///
/// Per draw, `lambda_j = alpha_i s_ij / (1 - rho)` and
/// `gamma_jk = alpha_i s_ij (rho / (1 - rho) s_{k|g} 1[same group] + s_ik)`,
/// both averaged over draws and scaled by the market size.
#[derive(Debug, Clone)]
pub struct PriceDerivativeParts {
    pub lambda: DVector<f64>,
    pub gamma: DMatrix<f64>,
    pub shares: DVector<f64>,
}

impl PriceDerivativeParts {
    /// `J[(j, k)] = dq_j / dp_k`.
    pub fn jacobian(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.lambda) - &self.gamma
    }
}

pub(crate) fn price_derivative_parts(
    delta: &MeanUtilities,
    prices: &DVector<f64>,
    params: &DemandParams,
    nests: &NestStructure,
    draws: &TasteDraws,
    market_size: f64,
) -> Result<PriceDerivativeParts> {
    check_lengths(delta, prices, nests)?;
    params.validate()?;
    if draws.is_empty() {
        return Err(Error::InvalidParameter("no taste draws".into()));
    }
    let n = delta.len();
    let nest_term = params.rho / (1.0 - params.rho);
    let inv_one_minus_rho = 1.0 / (1.0 - params.rho);
    let weight = draws.weight() * market_size;

    let mut kernel = DrawKernel::new(nests, params.rho);
    let mut lambda: DVector<f64> = DVector::zeros(n);
    let mut gamma: DMatrix<f64> = DMatrix::zeros(n, n);
    let mut shares = DVector::zeros(n);

    for &v in draws.values() {
        let alpha_i = params.price_coefficient(v);
        kernel.evaluate(&delta.0, prices, params.sigma * v);
        for j in 0..n {
            let sj = kernel.shares[j];
            shares[j] += draws.weight() * sj;
            let scaled = weight * alpha_i * sj;
            lambda[j] += scaled * inv_one_minus_rho;
            for k in 0..n {
                let mut cross = kernel.shares[k];
                if nests.same_group(j, k) {
                    cross += nest_term * kernel.within[k];
                }
                gamma[(j, k)] += scaled * cross;
            }
        }
    }

    if lambda.iter().chain(gamma.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite demand derivative".into()));
    }
    Ok(PriceDerivativeParts {
        lambda,
        gamma,
        shares,
    })
}

/// Demand Jacobian `J[(j, k)] = dq_j / dp_k`, with `delta` moving with price
/// through `alpha` and each consumer's slope being `alpha + sigma v_i`.
pub fn share_price_jacobian(
    delta: &MeanUtilities,
    prices: &DVector<f64>,
    params: &DemandParams,
    nests: &NestStructure,
    draws: &TasteDraws,
    market_size: f64,
) -> Result<DMatrix<f64>> {
    price_derivative_parts(delta, prices, params, nests, draws, market_size).map(|p| p.jacobian())
}
