use chrono::{Datelike, NaiveDate};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::demand::{market_size_from_rooms, DemandContext, DemandParams, NestStructure, TasteDraws};
use crate::error::{Error, Result};
use crate::supply::{build_conduct, ConductSpec, Platform, Scenario, SpGrouping};

/// Review criteria, all on a 1-5 scale.
pub const RATING_COLUMNS: [&str; 4] = ["cleanliness", "communication", "location", "overall"];

/// Column names of [`MarketData::characteristics`].
pub fn characteristic_names() -> Vec<String> {
    RATING_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain(["airbnb".to_string(), "beds".to_string()])
        .collect()
}

/// One market: a (date, ward) pair and the products sold in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketData {
    pub market_id: String,
    pub date: NaiveDate,
    pub ward: String,
    pub products: Vec<String>,
    /// Host or hotel id of each product.
    pub firms: Vec<String>,
    pub platforms: Vec<Platform>,
    pub prices: DVector<f64>,
    /// One row per product, columns named by [`characteristic_names`].
    pub characteristics: DMatrix<f64>,
    /// Booked room-nights per product.
    pub quantities: DVector<f64>,
    /// Rooms each product contributes to the market size.
    pub rooms: DVector<f64>,
    /// Price-cluster label per product, 1 = most expensive.
    pub clusters: Vec<usize>,
    pub nests: NestStructure,
    pub sp: Vec<bool>,
}

impl MarketData {
    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    /// Twice the number of rooms in the market.
    pub fn market_size(&self) -> f64 {
        market_size_from_rooms(self.rooms.sum())
    }

    pub fn shares(&self) -> DVector<f64> {
        &self.quantities / self.market_size()
    }

    /// `(category, level)` pairs for the city, month and day-of-week effects.
    pub fn fixed_effects(&self) -> [(&'static str, String); 3] {
        [
            ("city", self.ward.clone()),
            ("month", format!("{:02}", self.date.month())),
            ("dow", self.date.weekday().to_string()),
        ]
    }

    pub fn demand_context(&self, params: &DemandParams, draws: &TasteDraws) -> DemandContext {
        DemandContext {
            prices: self.prices.clone(),
            params: params.clone(),
            nests: self.nests.clone(),
            draws: draws.clone(),
            market_size: self.market_size(),
        }
    }

    pub fn conduct(&self, scenario: Scenario, grouping: SpGrouping) -> Result<ConductSpec> {
        build_conduct(&self.firms, &self.platforms, &self.sp, scenario, grouping)
            .map_err(|e| e.in_market(&self.market_id, "conduct"))
    }

    /// Keeps the flagged products. Their rooms leave the market size with them.
    pub fn retain(&self, keep: &[bool]) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&j| keep[j]).collect();
        let pick = |v: &DVector<f64>| DVector::from_iterator(idx.len(), idx.iter().map(|&j| v[j]));
        let pick_vec = |v: &[String]| idx.iter().map(|&j| v[j].clone()).collect::<Vec<_>>();
        Self {
            market_id: self.market_id.clone(),
            date: self.date,
            ward: self.ward.clone(),
            products: pick_vec(&self.products),
            firms: pick_vec(&self.firms),
            platforms: idx.iter().map(|&j| self.platforms[j]).collect(),
            prices: pick(&self.prices),
            characteristics: self.characteristics.select_rows(idx.iter()),
            quantities: pick(&self.quantities),
            rooms: pick(&self.rooms),
            clusters: idx.iter().map(|&j| self.clusters[j]).collect(),
            nests: self.nests.retain(keep),
            sp: idx.iter().map(|&j| self.sp[j]).collect(),
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let n = self.len();
        let checks = [
            ("firms", self.firms.len()),
            ("platforms", self.platforms.len()),
            ("prices", self.prices.len()),
            ("characteristics", self.characteristics.nrows()),
            ("quantities", self.quantities.len()),
            ("rooms", self.rooms.len()),
            ("clusters", self.clusters.len()),
            ("nests", self.nests.len()),
            ("sp flags", self.sp.len()),
        ];
        for (what, len) in checks {
            if len != n {
                return Err(Error::dimension(what, n, len).in_market(&self.market_id, "validation"));
            }
        }
        Ok(())
    }
}

/// Markets plus the names of their characteristic columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub characteristic_names: Vec<String>,
    pub markets: Vec<MarketData>,
}

impl Dataset {
    pub fn new(markets: Vec<MarketData>) -> Self {
        Self {
            characteristic_names: characteristic_names(),
            markets,
        }
    }

    pub fn n_products(&self) -> usize {
        self.markets.iter().map(MarketData::len).sum()
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.characteristic_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Config(format!("unknown characteristic `{name}`")))
    }

    pub fn validate(&self) -> Result<()> {
        for m in &self.markets {
            m.validate()?;
            if m.characteristics.ncols() != self.characteristic_names.len() {
                return Err(Error::dimension(
                    "characteristic columns",
                    self.characteristic_names.len(),
                    m.characteristics.ncols(),
                )
                .in_market(&m.market_id, "validation"));
            }
        }
        Ok(())
    }
}

/// Nest of a product: price clusters are paired (1-2, 3-4, 5-6, ...) and
/// split by platform unless every product is on Airbnb.
pub fn nest_for(cluster: usize, platform: Platform, split_platforms: bool) -> usize {
    let pair = (cluster.max(1) - 1) / 2;
    if split_platforms {
        2 * pair + if platform == Platform::Airbnb { 1 } else { 2 }
    } else {
        pair + 1
    }
}
