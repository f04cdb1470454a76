use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::supply::Platform;

/// Relative width of each bed type, single bed = 1.
pub const BED_WEIGHTS: [(&str, f64); 8] = [
    ("single", 1.0),
    ("semi_double", 1.33),
    ("double", 1.56),
    ("queen", 1.78),
    ("king", 2.0),
    ("bunk", 2.0),
    ("sofa", 1.0),
    ("futon", 1.0),
];

/// Hotel ratings arrive on a 1-10 scale and are divided by this.
pub const HOTEL_RATING_DIVISOR: f64 = 2.0;

const REQUIRED: [&str; 13] = [
    "date",
    "ward",
    "listing_id",
    "host_id",
    "platform",
    "price",
    "n_reviews",
    "cleanliness",
    "communication",
    "location",
    "overall",
    "vacancies",
    "rooms",
];

/// Weighted bed count from per-type counts ordered as [`BED_WEIGHTS`].
pub fn weighted_beds(counts: &[f64; 8]) -> f64 {
    counts.iter().zip(BED_WEIGHTS).map(|(c, (_, w))| c * w).sum()
}

/// One listing on one date, prices in units of 100,000 yen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListingRecord {
    pub date: NaiveDate,
    pub ward: String,
    pub listing_id: String,
    pub host_id: String,
    pub platform: Platform,
    pub price: f64,
    pub n_reviews: f64,
    /// Cleanliness, communication, location, overall; 1-5 scale.
    pub ratings: [f64; 4],
    /// Bed capacity in single-bed equivalents.
    pub beds: f64,
    pub vacancies: f64,
    pub rooms: f64,
}

impl ListingRecord {
    pub fn market_id(&self) -> String {
        market_id(self.date, &self.ward)
    }
}

pub fn market_id(date: NaiveDate, ward: &str) -> String {
    format!("{}/{}", date.format("%Y-%m-%d"), ward)
}

#[derive(Debug, Deserialize, Serialize)]
struct RawRow {
    date: String,
    ward: String,
    listing_id: String,
    host_id: String,
    platform: String,
    price: f64,
    n_reviews: f64,
    cleanliness: f64,
    communication: f64,
    location: f64,
    overall: f64,
    #[serde(default)]
    beds_single: f64,
    #[serde(default)]
    beds_semi_double: f64,
    #[serde(default)]
    beds_double: f64,
    #[serde(default)]
    beds_queen: f64,
    #[serde(default)]
    beds_king: f64,
    #[serde(default)]
    beds_bunk: f64,
    #[serde(default)]
    beds_sofa: f64,
    #[serde(default)]
    beds_futon: f64,
    vacancies: f64,
    rooms: f64,
}

impl RawRow {
    fn into_record(self, line: u64) -> Result<ListingRecord> {
        let row_err = |message: String| Error::Row { line, message };
        let date = NaiveDate::parse_from_str(self.date.trim(), "%Y-%m-%d")
            .map_err(|e| row_err(format!("bad date `{}`: {e}", self.date)))?;
        let platform: Platform = self.platform.parse().map_err(|e: Error| row_err(e.to_string()))?;
        if !(self.price > 0.0) || !self.price.is_finite() {
            return Err(row_err(format!("price must be positive, got {}", self.price)));
        }
        let mut ratings = [self.cleanliness, self.communication, self.location, self.overall];
        if platform == Platform::Hotel {
            ratings.iter_mut().for_each(|r| *r /= HOTEL_RATING_DIVISOR);
        }
        if let Some(r) = ratings.iter().find(|r| !(1.0..=5.0).contains(*r)) {
            return Err(row_err(format!("rating {r} outside [1, 5] after rescaling")));
        }
        if !(self.vacancies >= 0.0) {
            return Err(row_err(format!("vacancies must be non-negative, got {}", self.vacancies)));
        }
        if !(self.rooms > 0.0) {
            return Err(row_err(format!("rooms must be positive, got {}", self.rooms)));
        }
        if !(self.n_reviews >= 0.0) {
            return Err(row_err(format!("n_reviews must be non-negative, got {}", self.n_reviews)));
        }
        let beds = weighted_beds(&[
            self.beds_single,
            self.beds_semi_double,
            self.beds_double,
            self.beds_queen,
            self.beds_king,
            self.beds_bunk,
            self.beds_sofa,
            self.beds_futon,
        ]);
        Ok(ListingRecord {
            date,
            ward: self.ward.trim().to_string(),
            listing_id: self.listing_id.trim().to_string(),
            host_id: self.host_id.trim().to_string(),
            platform,
            price: self.price,
            n_reviews: self.n_reviews,
            ratings,
            beds,
            vacancies: self.vacancies,
            rooms: self.rooms,
        })
    }
}

/// Maps canonical column names to the headers used in a particular file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub columns: BTreeMap<String, String>,
}

impl ColumnMapping {
    pub fn from_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(File::open(path)?)?)
    }
}

/// Parses and validates listing rows without merging.
pub fn read_listings<R: Read>(reader: R, mapping: &ColumnMapping) -> Result<Vec<ListingRecord>> {
    let mut csv = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = csv.headers()?.clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    let reverse: HashMap<&str, &str> = mapping
        .columns
        .iter()
        .map(|(canonical, actual)| (actual.as_str(), canonical.as_str()))
        .collect();
    let renamed: csv::StringRecord = headers
        .iter()
        .map(|h| reverse.get(h).copied().unwrap_or(h))
        .collect();
    for column in REQUIRED {
        if !renamed.iter().any(|h| h == column) {
            return Err(Error::Row {
                line: 1,
                message: format!("missing required column `{column}`"),
            });
        }
    }

    let mut out = Vec::new();
    for record in csv.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let row: RawRow = record.deserialize(Some(&renamed)).map_err(|e| Error::Row {
            line,
            message: e.to_string(),
        })?;
        out.push(row.into_record(line)?);
    }
    Ok(out)
}

/// Merges listings a host offers at the same price in the same market into
/// one product; vacancies and rooms add up and the first listing's id and
/// characteristics are kept. Output keeps first-appearance order.
pub fn merge_duplicates(records: Vec<ListingRecord>) -> Vec<ListingRecord> {
    let mut index: HashMap<(String, String, u64), usize> = HashMap::new();
    let mut out: Vec<ListingRecord> = Vec::with_capacity(records.len());
    let mut merged = 0usize;
    for r in records {
        let key = (r.market_id(), r.host_id.clone(), r.price.to_bits());
        match index.get(&key) {
            Some(&i) => {
                out[i].vacancies += r.vacancies;
                out[i].rooms += r.rooms;
                merged += 1;
            }
            None => {
                index.insert(key, out.len());
                out.push(r);
            }
        }
    }
    if merged > 0 {
        info!("merged {merged} same-host same-price listings");
    }
    out
}

/// Reads, validates and merges a listing CSV.
pub fn ingest(path: &Path) -> Result<Vec<ListingRecord>> {
    ingest_with(path, &ColumnMapping::default())
}

pub fn ingest_with(path: &Path, mapping: &ColumnMapping) -> Result<Vec<ListingRecord>> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    if text.trim().is_empty() {
        warn!("{} is empty", path.display());
        return Ok(Vec::new());
    }
    let records = read_listings(text.as_bytes(), mapping)?;
    Ok(merge_duplicates(records))
}

/// Writes records in the canonical schema; hotel ratings go back to the
/// 1-10 scale and bed capacity is written as single-bed equivalents.
pub fn write_listings<W: Write>(writer: W, records: &[ListingRecord]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    for r in records {
        let scale = if r.platform == Platform::Hotel { HOTEL_RATING_DIVISOR } else { 1.0 };
        csv.serialize(RawRow {
            date: r.date.format("%Y-%m-%d").to_string(),
            ward: r.ward.clone(),
            listing_id: r.listing_id.clone(),
            host_id: r.host_id.clone(),
            platform: r.platform.to_string(),
            price: r.price,
            n_reviews: r.n_reviews,
            cleanliness: r.ratings[0] * scale,
            communication: r.ratings[1] * scale,
            location: r.ratings[2] * scale,
            overall: r.ratings[3] * scale,
            beds_single: r.beds,
            beds_semi_double: 0.0,
            beds_double: 0.0,
            beds_queen: 0.0,
            beds_king: 0.0,
            beds_bunk: 0.0,
            beds_sofa: 0.0,
            beds_futon: 0.0,
            vacancies: r.vacancies,
            rooms: r.rooms,
        })?;
    }
    csv.flush()?;
    Ok(())
}
