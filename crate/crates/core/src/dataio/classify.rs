use std::collections::BTreeMap;

use log::warn;

use super::records::ListingRecord;
use crate::supply::Platform;

/// Number of cheapest clusters whose listings qualify under the low-price
/// criterion (clusters 4 and 5 of 5).
pub const SP_BOTTOM_CLUSTERS: usize = 2;

/// Whether the price of each listing id ever differs between consecutive
/// observed dates. Listings seen on a single date map to `None`.
pub fn dynamic_pricing(records: &[ListingRecord]) -> BTreeMap<String, Option<bool>> {
    let mut panel: BTreeMap<&str, Vec<(chrono::NaiveDate, f64)>> = BTreeMap::new();
    for r in records {
        panel.entry(&r.listing_id).or_default().push((r.date, r.price));
    }
    panel
        .into_iter()
        .map(|(id, mut obs)| {
            obs.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let dates = {
                let mut d: Vec<_> = obs.iter().map(|o| o.0).collect();
                d.dedup();
                d.len()
            };
            let flag = (dates >= 2).then(|| obs.windows(2).any(|w| w[0].0 != w[1].0 && w[0].1 != w[1].1));
            (id.to_string(), flag)
        })
        .collect()
}

/// Smart-pricing flag per record: an Airbnb listing in one of the bottom two
/// price clusters whose price changes between consecutive observed dates.
///
/// `labels[i]` is the price cluster of `records[i]` under a `k`-cluster model.
pub fn classify_sp(records: &[ListingRecord], labels: &[usize], k: usize) -> Vec<bool> {
    let dynamic = dynamic_pricing(records);
    let undecidable = dynamic.values().filter(|v| v.is_none()).count();
    if undecidable > 0 {
        warn!("{undecidable} listings observed on a single date; dynamic-pricing criterion treated as unmet");
    }
    let cutoff = k.saturating_sub(SP_BOTTOM_CLUSTERS);
    records
        .iter()
        .zip(labels)
        .map(|(r, &label)| {
            r.platform == Platform::Airbnb
                && label > cutoff
                && dynamic.get(&r.listing_id).copied().flatten().unwrap_or(false)
        })
        .collect()
}
