use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Commission rate the platform charges hosts on their revenue.
pub const COMMISSION_RATE: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Platform {
    Airbnb,
    Hotel,
}

impl FromStr for Platform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "airbnb" => Ok(Platform::Airbnb),
            "hotel" | "booking" => Ok(Platform::Hotel),
            other => Err(Error::Validation(format!("unknown platform `{other}`"))),
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Platform::Airbnb => "airbnb",
            Platform::Hotel => "hotel",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Smart pricing maximizes each adopting host's own revenue.
    Baseline,
    /// Smart pricing maximizes the platform's total commission revenue.
    SelfPreferencing,
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "baseline" => Ok(Scenario::Baseline),
            "self-preferencing" | "self_preferencing" | "sp" => Ok(Scenario::SelfPreferencing),
            other => Err(Error::Validation(format!("unknown scenario `{other}`"))),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Baseline => "baseline",
            Scenario::SelfPreferencing => "self-preferencing",
        })
    }
}

/// How smart-pricing listings are grouped into decision makers at baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpGrouping {
    #[default]
    PerHost,
    PerProduct,
}

/// Pricing conduct for one market.
///
/// Row `j` of the first-order system reads
/// `q_j + sum_k ownership[j,k] * (p_k - C[j,k]) * dq_k/dp_j = 0` with
/// `C[j,k] = cost_mask[j,k] * mc_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConductSpec {
    pub scenario: Scenario,
    pub ownership: DMatrix<f64>,
    pub cost_mask: DMatrix<f64>,
    pub tau: f64,
    pub firms: Vec<String>,
    pub platforms: Vec<Platform>,
    pub sp: Vec<bool>,
}

impl ConductSpec {
    pub fn len(&self) -> usize {
        self.firms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.firms.is_empty()
    }

    pub fn is_airbnb(&self, j: usize) -> bool {
        self.platforms[j] == Platform::Airbnb
    }

    /// Whether row `j` is priced to maximize platform commission.
    pub fn platform_row(&self, j: usize) -> bool {
        self.scenario == Scenario::SelfPreferencing && self.sp[j]
    }

    /// Row-dependent cost matrix `C[j,k] = cost_mask[j,k] * mc_k`.
    pub fn effective_costs(&self, mc: &DVector<f64>) -> DMatrix<f64> {
        let mut c = self.cost_mask.clone();
        for (k, mut column) in c.column_iter_mut().enumerate() {
            column *= mc[k];
        }
        c
    }

    /// Marginal cost that enters a seller's profit: zero for smart-pricing
    /// listings.
    pub fn cost_indicator(&self, j: usize) -> f64 {
        if self.sp[j] {
            0.0
        } else {
            1.0
        }
    }
}

/// Builds ownership and effective-cost structure for a scenario.
pub fn build_conduct(
    firms: &[String],
    platforms: &[Platform],
    sp_flags: &[bool],
    scenario: Scenario,
    grouping: SpGrouping,
) -> Result<ConductSpec> {
    let n = firms.len();
    if platforms.len() != n {
        return Err(Error::dimension("platforms", n, platforms.len()));
    }
    if sp_flags.len() != n {
        return Err(Error::dimension("smart-pricing flags", n, sp_flags.len()));
    }
    if let Some(j) = (0..n).find(|&j| sp_flags[j] && platforms[j] != Platform::Airbnb) {
        return Err(Error::Validation(format!(
            "product {j} (firm {}) is flagged as smart pricing but is not an Airbnb listing",
            firms[j]
        )));
    }

    let same_decision_maker = |j: usize, k: usize| {
        if j == k {
            return true;
        }
        if firms[j] != firms[k] {
            return false;
        }
        match grouping {
            SpGrouping::PerHost => true,
            SpGrouping::PerProduct => !sp_flags[j] && !sp_flags[k],
        }
    };

    let mut ownership = DMatrix::zeros(n, n);
    let mut cost_mask = DMatrix::zeros(n, n);
    for j in 0..n {
        let platform_row = scenario == Scenario::SelfPreferencing && sp_flags[j];
        for k in 0..n {
            if platform_row {
                if platforms[k] == Platform::Airbnb {
                    ownership[(j, k)] = 1.0;
                }
            } else if same_decision_maker(j, k) {
                ownership[(j, k)] = 1.0;
                if !sp_flags[k] {
                    cost_mask[(j, k)] = 1.0;
                }
            }
        }
    }

    Ok(ConductSpec {
        scenario,
        ownership,
        cost_mask,
        tau: COMMISSION_RATE,
        firms: firms.to_vec(),
        platforms: platforms.to_vec(),
        sp: sp_flags.to_vec(),
    })
}
