//! Random-coefficient nested logit (RCNL) demand.
//!
//! Utility of consumer `i` for product `j` is
//! `delta_j + sigma * v_i * p_j + zeta_ig + (1 - rho) * eps_ij`, where `delta_j`
//! already contains the mean price effect `alpha * p_j`. The outside good sits
//! alone in group 0 with utility normalized to zero. Integrals over `v_i` are
//! approximated by a uniform-weight Monte Carlo average over [`TasteDraws`].

mod inversion;
mod jacobian;
mod kernel;
mod shares;
mod surplus;

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use inversion::{invert_shares, InversionOptions, InversionResult};
pub use jacobian::{share_price_jacobian, PriceDerivativeParts};
pub use shares::{compute_shares, demand_quantities, market_size_from_rooms, MARKET_SIZE_PER_ROOM};
pub use surplus::{consumer_surplus, ConsumerSurplus, SurplusPolicy};

pub(crate) use jacobian::price_derivative_parts;

/// Default number of simulation draws per market.
pub const DEFAULT_DRAWS: usize = 500;

/// Demand primitives. `alpha` and `sigma` are in utility per 100,000 yen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandParams {
    pub alpha: f64,
    pub sigma: f64,
    pub rho: f64,
    #[serde(default)]
    pub beta: Vec<f64>,
    #[serde(default)]
    pub fe: BTreeMap<String, f64>,
}

impl DemandParams {
    pub fn new(alpha: f64, sigma: f64, rho: f64) -> Result<Self> {
        let params = Self {
            alpha,
            sigma,
            rho,
            beta: Vec::new(),
            fe: BTreeMap::new(),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha = {}", self.alpha)));
        }
        if !self.sigma.is_finite() {
            return Err(Error::InvalidParameter(format!("sigma = {}", self.sigma)));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidParameter(format!(
                "rho = {} is outside [0, 1)",
                self.rho
            )));
        }
        Ok(())
    }

    /// Price coefficient of a consumer with taste draw `v`.
    #[inline]
    pub fn price_coefficient(&self, v: f64) -> f64 {
        self.alpha + self.sigma * v
    }
}

/// Assignment of inside products to nesting groups `1..=G`.
///
/// Group 0 is reserved for the outside good and never appears here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NestStructure {
    groups: Vec<usize>,
    n_groups: usize,
}

impl NestStructure {
    pub fn new(groups: Vec<usize>) -> Result<Self> {
        if let Some(pos) = groups.iter().position(|&g| g == 0) {
            return Err(Error::Validation(format!(
                "product {pos} is assigned to group 0, which is reserved for the outside good"
            )));
        }
        let n_groups = groups.iter().copied().max().unwrap_or(0);
        Ok(Self { groups, n_groups })
    }

    /// Every product in its own group (plain logit when `rho = 0`).
    pub fn singletons(n: usize) -> Self {
        Self {
            groups: (1..=n).collect(),
            n_groups: n,
        }
    }

    /// Every product in group 1.
    pub fn single(n: usize) -> Self {
        Self {
            groups: vec![1; n],
            n_groups: usize::from(n > 0),
        }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn group(&self, j: usize) -> usize {
        self.groups[j]
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    /// Largest group label.
    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn same_group(&self, j: usize, k: usize) -> bool {
        self.groups[j] == self.groups[k]
    }

    /// Keeps only the products whose index is flagged in `keep`.
    pub fn retain(&self, keep: &[bool]) -> Self {
        let groups: Vec<usize> = self
            .groups
            .iter()
            .zip(keep)
            .filter_map(|(&g, &k)| k.then_some(g))
            .collect();
        let n_groups = groups.iter().copied().max().unwrap_or(0);
        Self { groups, n_groups }
    }
}

/// Standard-normal taste draws with uniform weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TasteDraws {
    draws: Vec<f64>,
    seed: Option<u64>,
}

impl TasteDraws {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        Self {
            draws,
            seed: Some(seed),
        }
    }

    /// Draws for one market, seeded from the base seed and the market id.
    pub fn for_market(n: usize, seed: u64, market_id: &str) -> Self {
        Self::new(n, derive_seed(seed, market_id))
    }

    pub fn from_values(draws: Vec<f64>) -> Self {
        Self { draws, seed: None }
    }

    pub fn values(&self) -> &[f64] {
        &self.draws
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.draws.len() as f64
    }
}

/// Stable per-market seed (FNV-1a over the id, mixed with the base seed).
pub fn derive_seed(seed: u64, key: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in key.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    // splitmix64 finalizer
    let mut z = hash ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mean utilities `delta_j = alpha * p_j + x_j' beta + xi_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanUtilities(pub DVector<f64>);

impl MeanUtilities {
    pub fn new(delta: DVector<f64>) -> Result<Self> {
        if delta.iter().any(|d| !d.is_finite()) {
            return Err(Error::InvalidParameter("non-finite mean utility".into()));
        }
        Ok(Self(delta))
    }

    pub fn from_slice(delta: &[f64]) -> Self {
        Self(DVector::from_column_slice(delta))
    }

    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(n))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }
}

/// Everything needed to evaluate demand in one market apart from `delta`.
#[derive(Debug, Clone)]
pub struct DemandContext {
    pub prices: DVector<f64>,
    pub params: DemandParams,
    pub nests: NestStructure,
    pub draws: TasteDraws,
    pub market_size: f64,
}

impl DemandContext {
    pub fn shares(&self, delta: &MeanUtilities) -> Result<DVector<f64>> {
        compute_shares(delta, &self.prices, &self.params, &self.nests, &self.draws)
    }

    pub fn jacobian(&self, delta: &MeanUtilities) -> Result<nalgebra::DMatrix<f64>> {
        share_price_jacobian(
            delta,
            &self.prices,
            &self.params,
            &self.nests,
            &self.draws,
            self.market_size,
        )
    }

    /// Mean utilities after moving prices to `new_prices`, holding the
    /// non-price part of utility fixed.
    pub fn reprice(&self, delta: &MeanUtilities, new_prices: &DVector<f64>) -> MeanUtilities {
        MeanUtilities(&delta.0 + (new_prices - &self.prices) * self.params.alpha)
    }
}

pub(crate) fn check_lengths(
    delta: &MeanUtilities,
    prices: &DVector<f64>,
    nests: &NestStructure,
) -> Result<()> {
    if prices.len() != delta.len() {
        return Err(Error::dimension("prices", delta.len(), prices.len()));
    }
    if nests.len() != delta.len() {
        return Err(Error::dimension("nest assignment", delta.len(), nests.len()));
    }
    Ok(())
}
