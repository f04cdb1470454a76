use log::debug;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::kernel::DrawKernel;
use super::{check_lengths, DemandParams, MeanUtilities, NestStructure, TasteDraws};
use crate::error::{Error, Result};

/// What to do with draws whose price coefficient `alpha + sigma v` is not
/// negative, for which surplus in money terms is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "policy", content = "epsilon")]
pub enum SurplusPolicy {
    Error,
    #[default]
    ExcludeDraw,
    /// Replace the coefficient by `-epsilon`.
    Clip(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsumerSurplus {
    /// Average over retained draws of `log-sum / -(alpha + sigma v)`.
    pub per_capita: f64,
    /// Per-draw surplus; `None` for excluded draws.
    pub per_draw: Vec<Option<f64>>,
    pub excluded_draws: usize,
}

impl ConsumerSurplus {
    pub fn market_total(&self, market_size: f64) -> f64 {
        self.per_capita * market_size
    }
}

/// Expected consumer surplus per potential consumer.
///
/// Each draw contributes `log(1 + sum_g exp IV_g) / -(alpha + sigma v)`; the
/// divisor is the marginal utility of income, positive when price lowers
/// utility.
pub fn consumer_surplus(
    delta: &MeanUtilities,
    prices: &DVector<f64>,
    params: &DemandParams,
    nests: &NestStructure,
    draws: &TasteDraws,
    policy: SurplusPolicy,
) -> Result<ConsumerSurplus> {
    check_lengths(delta, prices, nests)?;
    params.validate()?;
    if draws.is_empty() {
        return Err(Error::InvalidParameter("no taste draws".into()));
    }

    let mut kernel = DrawKernel::new(nests, params.rho);
    let mut per_draw = Vec::with_capacity(draws.len());
    let mut total = 0.0;
    let mut kept = 0usize;

    for &v in draws.values() {
        let mut coefficient = params.price_coefficient(v);
        if coefficient >= 0.0 {
            match policy {
                SurplusPolicy::Error => return Err(Error::DegenerateSurplus),
                SurplusPolicy::ExcludeDraw => {
                    per_draw.push(None);
                    continue;
                }
                SurplusPolicy::Clip(eps) => coefficient = -eps.abs(),
            }
        }
        let log_sum = if delta.is_empty() {
            0.0
        } else {
            kernel.evaluate(&delta.0, prices, params.sigma * v);
            kernel.log_denominator
        };
        let cs = log_sum / -coefficient;
        total += cs;
        kept += 1;
        per_draw.push(Some(cs));
    }

    let excluded_draws = draws.len() - kept;
    if kept == 0 {
        return Err(Error::DegenerateSurplus);
    }
    if excluded_draws > 0 {
        debug!("consumer surplus: excluded {excluded_draws} draws with non-negative price coefficient");
    }
    let per_capita = total / kept as f64;
    if !per_capita.is_finite() {
        return Err(Error::NumericalOverflow("consumer surplus"));
    }
    Ok(ConsumerSurplus {
        per_capita,
        per_draw,
        excluded_draws,
    })
}
