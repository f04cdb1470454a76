//! Data ingestion, price clustering, smart-pricing classification, sample
//! screens and synthetic markets.

mod classify;
mod cluster;
mod market;
mod records;
mod screen;
mod synth;

pub use classify::{classify_sp, dynamic_pricing, SP_BOTTOM_CLUSTERS};
pub use cluster::{kmeans_prices, ClusterModel, DEFAULT_CLUSTERS, KMEANS_RESTARTS};
pub use market::{characteristic_names, nest_for, Dataset, MarketData, RATING_COLUMNS};
pub use records::{
    ingest, ingest_with, market_id, merge_duplicates, read_listings, weighted_beds, write_listings, ColumnMapping,
    ListingRecord, BED_WEIGHTS, HOTEL_RATING_DIVISOR,
};
pub use screen::{apply_screens, build_markets, CompetitionMode, SHARE_THRESHOLD};
pub use synth::{synthesize, GroundTruth, MarketTruth, SynthConfig, SynthPricing, SyntheticData};
