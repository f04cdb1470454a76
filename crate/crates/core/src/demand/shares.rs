use nalgebra::DVector;

use super::kernel::DrawKernel;
use super::{check_lengths, DemandParams, MeanUtilities, NestStructure, TasteDraws};
use crate::error::{Error, Result};

/// Potential market size per room on offer in a market.
pub const MARKET_SIZE_PER_ROOM: f64 = 2.0;

/// Potential market size `I_m` for a market with `rooms` rooms on offer.
pub fn market_size_from_rooms(rooms: f64) -> f64 {
    rooms * MARKET_SIZE_PER_ROOM
}

/// Simulated market shares of the inside products.
pub fn compute_shares(
    delta: &MeanUtilities,
    prices: &DVector<f64>,
    params: &DemandParams,
    nests: &NestStructure,
    draws: &TasteDraws,
) -> Result<DVector<f64>> {
    check_lengths(delta, prices, nests)?;
    params.validate()?;
    if draws.is_empty() {
        return Err(Error::InvalidParameter("no taste draws".into()));
    }

    let mut kernel = DrawKernel::new(nests, params.rho);
    let mut shares: DVector<f64> = DVector::zeros(delta.len());
    let weight = draws.weight();
    for &v in draws.values() {
        kernel.evaluate(&delta.0, prices, params.sigma * v);
        for (acc, s) in shares.iter_mut().zip(&kernel.shares) {
            *acc += weight * s;
        }
    }

    if shares.iter().any(|s| !s.is_finite()) {
        return Err(Error::NumericalOverflow("share computation"));
    }
    Ok(shares)
}

/// Quantities `q_j = s_j * I_m`.
pub fn demand_quantities(shares: &DVector<f64>, market_size: f64) -> Result<DVector<f64>> {
    if !(market_size > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "market size must be positive, got {market_size}"
        )));
    }
    Ok(shares * market_size)
}
