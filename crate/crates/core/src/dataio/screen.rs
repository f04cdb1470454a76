use std::collections::BTreeMap;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::market::{characteristic_names, nest_for, Dataset, MarketData};
use super::records::ListingRecord;
use crate::demand::NestStructure;
use crate::error::{Error, Result};
use crate::supply::Platform;

/// Products with a share strictly below this are dropped.
pub const SHARE_THRESHOLD: f64 = 0.005;

/// Which sellers count as competitors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompetitionMode {
    #[default]
    WithHotels,
    /// Hotels are dropped and nests follow price clusters only.
    OnlyAirbnb,
}

impl std::str::FromStr for CompetitionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "with-hotels" => Ok(Self::WithHotels),
            "only-airbnb" => Ok(Self::OnlyAirbnb),
            other => Err(Error::Validation(format!("unknown competition mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for CompetitionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::WithHotels => "with-hotels",
            Self::OnlyAirbnb => "only-airbnb",
        })
    }
}

/// Groups records into markets ordered by market id, keeping record order
/// within a market.
pub fn build_markets(
    records: &[ListingRecord],
    clusters: &[usize],
    sp: &[bool],
    mode: CompetitionMode,
) -> Result<Dataset> {
    if clusters.len() != records.len() {
        return Err(Error::dimension("cluster labels", records.len(), clusters.len()));
    }
    if sp.len() != records.len() {
        return Err(Error::dimension("smart-pricing flags", records.len(), sp.len()));
    }
    if let Some(i) = (0..records.len()).find(|&i| sp[i] && records[i].platform != Platform::Airbnb) {
        return Err(Error::Validation(format!(
            "hotel listing {} is flagged as smart pricing",
            records[i].listing_id
        )));
    }
    let split = mode == CompetitionMode::WithHotels;
    let mut grouped: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if mode == CompetitionMode::OnlyAirbnb && r.platform != Platform::Airbnb {
            continue;
        }
        grouped.entry(r.market_id()).or_default().push(i);
    }
    let n_chars = characteristic_names().len();
    let markets = grouped
        .into_iter()
        .map(|(id, idx)| {
            let first = &records[idx[0]];
            let n = idx.len();
            let mut chars = DMatrix::zeros(n, n_chars);
            for (row, &i) in idx.iter().enumerate() {
                let r = &records[i];
                for c in 0..4 {
                    chars[(row, c)] = r.ratings[c];
                }
                chars[(row, 4)] = f64::from(r.platform == Platform::Airbnb);
                chars[(row, 5)] = r.beds;
            }
            let nests = NestStructure::new(
                idx.iter().map(|&i| nest_for(clusters[i], records[i].platform, split)).collect(),
            )?;
            Ok(MarketData {
                market_id: id,
                date: first.date,
                ward: first.ward.clone(),
                products: idx.iter().map(|&i| records[i].listing_id.clone()).collect(),
                firms: idx.iter().map(|&i| records[i].host_id.clone()).collect(),
                platforms: idx.iter().map(|&i| records[i].platform).collect(),
                prices: DVector::from_iterator(n, idx.iter().map(|&i| records[i].price)),
                characteristics: chars,
                quantities: DVector::from_iterator(n, idx.iter().map(|&i| records[i].vacancies)),
                rooms: DVector::from_iterator(n, idx.iter().map(|&i| records[i].rooms)),
                clusters: idx.iter().map(|&i| clusters[i]).collect(),
                nests,
                sp: idx.iter().map(|&i| sp[i]).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(markets))
}

/// Drops products whose share is below [`SHARE_THRESHOLD`]; market sizes
/// are recomputed without them and markets left empty are removed.
pub fn apply_screens(data: &Dataset) -> Dataset {
    let mut dropped = 0usize;
    let mut markets = Vec::with_capacity(data.markets.len());
    for m in &data.markets {
        let shares = m.shares();
        let keep: Vec<bool> = shares.iter().map(|&s| !(s < SHARE_THRESHOLD)).collect();
        let removed = keep.iter().filter(|k| !**k).count();
        dropped += removed;
        if removed == m.len() {
            warn!("market {} has no product above the share threshold; dropped", m.market_id);
            continue;
        }
        markets.push(if removed > 0 { m.retain(&keep) } else { m.clone() });
    }
    info!("share screen dropped {dropped} products");
    Dataset {
        characteristic_names: data.characteristic_names.clone(),
        markets,
    }
}
