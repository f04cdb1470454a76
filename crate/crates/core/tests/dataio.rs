use std::io::Write;

use chrono::NaiveDate;
use conductsim::dataio::*;
use conductsim::demand::{invert_shares, DemandParams, InversionOptions, TasteDraws};
use conductsim::supply::Platform;
use conductsim::Error;
use proptest::prelude::*;

const HEADER: &str = "date,ward,listing_id,host_id,platform,price,n_reviews,cleanliness,communication,location,overall,beds_single,beds_double,vacancies,rooms";

fn csv_file(body: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(body.as_bytes()).unwrap();
    f
}

fn record(day: u32, id: &str, host: &str, platform: Platform, price: f64, vacancies: f64) -> ListingRecord {
    ListingRecord {
        date: NaiveDate::from_ymd_opt(2023, 7, day).unwrap(),
        ward: "ward-01".into(),
        listing_id: id.into(),
        host_id: host.into(),
        platform,
        price,
        n_reviews: 3.0,
        ratings: [4.5, 4.6, 4.7, 4.8],
        beds: 1.0,
        vacancies,
        rooms: vacancies.max(1.0),
    }
}

#[test]
fn empty_file_is_empty_dataset() {
    let f = csv_file("");
    assert!(ingest(f.path()).unwrap().is_empty());
    let header_only = csv_file(&format!("{HEADER}\n"));
    assert!(ingest(header_only.path()).unwrap().is_empty());
}

#[test]
fn duplicate_listings_merge_with_summed_vacancies() {
    let f = csv_file(&format!(
        "{HEADER}\n\
         2023-07-01,ward-01,a1,h1,airbnb,0.25,3,4.5,4.5,4.5,4.5,1,0,2,2\n\
         2023-07-01,ward-01,a2,h1,airbnb,0.25,1,4.0,4.0,4.0,4.0,1,0,3,3\n\
         2023-07-01,ward-01,a3,h1,airbnb,0.30,1,4.0,4.0,4.0,4.0,1,0,1,1\n"
    ));
    let records = ingest(f.path()).unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0].listing_id, "a1");
    assert_eq!(records[0].vacancies, 5.0);
    assert_eq!(records[0].rooms, 5.0);
}

#[test]
fn hotel_ratings_are_rescaled() {
    let f = csv_file(&format!(
        "{HEADER}\n2023-07-01,ward-01,b1,hotel-1,booking,0.4,10,8.2,9.0,7.0,10.0,0,1,4,10\n"
    ));
    let r = &ingest(f.path()).unwrap()[0];
    assert_eq!(r.platform, Platform::Hotel);
    assert!((r.ratings[0] - 4.1).abs() < 1e-12);
    assert!((r.ratings[3] - 5.0).abs() < 1e-12);
    assert!((r.beds - 1.56).abs() < 1e-12);
}

#[test]
fn row_errors_carry_line_numbers() {
    let bad_price = csv_file(&format!(
        "{HEADER}\n\
         2023-07-01,ward-01,a1,h1,airbnb,0.25,3,4.5,4.5,4.5,4.5,1,0,2,2\n\
         2023-07-01,ward-01,a2,h2,airbnb,0,3,4.5,4.5,4.5,4.5,1,0,2,2\n"
    ));
    match ingest(bad_price.path()) {
        Err(Error::Row { line, message }) => {
            assert_eq!(line, 3);
            assert!(message.contains("price"));
        }
        other => panic!("expected a row error, got {other:?}"),
    }
    let bad_platform = csv_file(&format!(
        "{HEADER}\n2023-07-01,ward-01,a1,h1,vrbo,0.25,3,4.5,4.5,4.5,4.5,1,0,2,2\n"
    ));
    assert!(matches!(ingest(bad_platform.path()), Err(Error::Row { line: 2, .. })));
    let missing = csv_file("date,ward\n2023-07-01,w\n");
    match ingest(missing.path()) {
        Err(Error::Row { line: 1, message }) => assert!(message.contains("listing_id")),
        other => panic!("expected a missing-column error, got {other:?}"),
    }
}

#[test]
fn column_mapping_renames_headers() {
    let f = csv_file(
        "day,ward,listing_id,host_id,platform,nightly,n_reviews,cleanliness,communication,location,overall,vacancies,rooms\n\
         2023-07-02,ward-02,a1,h1,airbnb,0.2,0,4,4,4,4,1,1\n",
    );
    let mapping = ColumnMapping {
        columns: [("date", "day"), ("price", "nightly")]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect(),
    };
    let records = ingest_with(f.path(), &mapping).unwrap();
    assert_eq!(records[0].price, 0.2);
    assert_eq!(records[0].market_id(), "2023-07-02/ward-02");
}

#[test]
fn written_listings_read_back() {
    let records = vec![
        record(1, "a", "h", Platform::Airbnb, 0.2, 2.0),
        record(1, "b", "hotel", Platform::Hotel, 0.35, 4.0),
    ];
    let mut buf = Vec::new();
    write_listings(&mut buf, &records).unwrap();
    let back = read_listings(buf.as_slice(), &ColumnMapping::default()).unwrap();
    assert_eq!(back.len(), 2);
    for (a, b) in records.iter().zip(&back) {
        assert_eq!(a.listing_id, b.listing_id);
        assert!((a.price - b.price).abs() < 1e-15);
        for c in 0..4 {
            assert!((a.ratings[c] - b.ratings[c]).abs() < 1e-12);
        }
    }
}

#[test]
fn kmeans_separates_clusters() {
    let model = kmeans_prices(&[1.0, 1.1, 5.0, 5.2], 2, 0).unwrap();
    assert_eq!(model.labels(&[1.0, 1.1, 5.0, 5.2]), vec![2, 2, 1, 1]);
    assert_eq!(DEFAULT_CLUSTERS, 5);
    assert!(kmeans_prices(&[1.0, 1.0, 2.0], 3, 0).is_err());
}

#[test]
fn screen_threshold_is_strict() {
    // market size 2 * 1000 rooms; shares 0.4%, 0.5%, 10%
    let mut records = vec![
        record(1, "low", "h1", Platform::Airbnb, 0.2, 8.0),
        record(1, "edge", "h2", Platform::Airbnb, 0.2, 10.0),
        record(1, "big", "h3", Platform::Hotel, 0.3, 200.0),
    ];
    for (r, rooms) in records.iter_mut().zip([300.0, 300.0, 400.0]) {
        r.rooms = rooms;
    }
    let n = records.len();
    let data = build_markets(&records, &vec![5; n], &vec![false; n], CompetitionMode::WithHotels).unwrap();
    let screened = apply_screens(&data);
    assert_eq!(screened.markets[0].products, vec!["edge", "big"]);
    // the dropped product's rooms leave the market size
    assert_eq!(screened.markets[0].market_size(), 1400.0);
    assert_eq!(apply_screens(&screened), screened);
}

#[test]
fn only_airbnb_mode_drops_hotels() {
    let records = vec![
        record(1, "a", "h1", Platform::Airbnb, 0.2, 5.0),
        record(1, "b", "hotel", Platform::Hotel, 0.3, 5.0),
    ];
    let data = build_markets(&records, &[4, 2], &[false, false], CompetitionMode::OnlyAirbnb).unwrap();
    assert_eq!(data.markets[0].products, vec!["a"]);
    assert!(build_markets(&records, &[4, 2], &[false, true], CompetitionMode::WithHotels).is_err());
}

fn small_synth() -> SynthConfig {
    SynthConfig {
        n_markets: 12,
        n_draws: 60,
        ..SynthConfig::default()
    }
}

#[test]
fn synthesis_is_deterministic() {
    let a = synthesize(&small_synth()).unwrap();
    let b = synthesize(&small_synth()).unwrap();
    assert_eq!(a.dataset, b.dataset);
    assert_eq!(a.truth, b.truth);
    assert_eq!(a.records, b.records);
    let other = synthesize(&SynthConfig { seed: 99, ..small_synth() }).unwrap();
    assert_ne!(a.dataset, other.dataset);
}

#[test]
fn synthetic_shares_reinvert_to_true_utilities() {
    let config = small_synth();
    let data = synthesize(&config).unwrap();
    assert_eq!(
        (data.truth.alpha, data.truth.sigma, data.truth.rho),
        (-0.928, -0.559, 0.436)
    );
    let params = DemandParams::new(data.truth.alpha, data.truth.sigma, data.truth.rho).unwrap();
    for (m, truth) in data.dataset.markets.iter().zip(&data.truth.markets) {
        assert_eq!(m.market_id, truth.market_id);
        let draws = TasteDraws::for_market(config.n_draws, config.seed, &m.market_id);
        let out = invert_shares(&m.shares(), &params, &m.nests, &draws, &m.prices, None, &InversionOptions::default())
            .unwrap();
        assert!((&out.delta.0 - &truth.delta).amax() < 1e-10);
        assert!(m.shares().iter().all(|&s| s >= SHARE_THRESHOLD));
    }
}

#[test]
fn smart_pricing_preset_flags_only_airbnb() {
    let config = SynthConfig {
        n_markets: 10,
        n_draws: 60,
        ..SynthConfig::with_smart_pricing()
    };
    let data = synthesize(&config).unwrap();
    let mut any_sp = false;
    for m in &data.dataset.markets {
        for j in 0..m.len() {
            if m.sp[j] {
                any_sp = true;
                assert_eq!(m.platforms[j], Platform::Airbnb);
            }
        }
    }
    assert!(any_sp);
}

#[test]
fn synthetic_records_rebuild_the_dataset() {
    let data = synthesize(&small_synth()).unwrap();
    let n = data.records.len();
    let clusters: Vec<usize> = data
        .dataset
        .markets
        .iter()
        .flat_map(|m| m.clusters.iter().copied())
        .collect();
    assert_eq!(clusters.len(), n);
    let rebuilt = build_markets(&data.records, &clusters, &vec![false; n], CompetitionMode::WithHotels).unwrap();
    for (a, b) in rebuilt.markets.iter().zip(&data.dataset.markets) {
        assert_eq!(a.products, b.products);
        assert!((&a.quantities - &b.quantities).amax() < 1e-12);
        assert!((a.market_size() - b.market_size()).abs() < 1e-12);
    }
}

fn arb_records() -> impl Strategy<Value = Vec<ListingRecord>> {
    prop::collection::vec((1u32..4, 0usize..5, 0usize..3, any::<bool>(), 1u32..4, 0.0f64..10.0), 1..40).prop_map(
        |rows| {
            rows.into_iter()
                .map(|(day, listing, host, hotel, price_level, vacancies)| {
                    let platform = if hotel { Platform::Hotel } else { Platform::Airbnb };
                    record(
                        day,
                        &format!("l{listing}"),
                        &format!("h{host}"),
                        platform,
                        0.1 * f64::from(price_level),
                        vacancies,
                    )
                })
                .collect()
        },
    )
}

proptest! {
    #[test]
    fn merge_conserves_vacancies(records in arb_records()) {
        let mut before = std::collections::BTreeMap::new();
        for r in &records {
            *before.entry(r.market_id()).or_insert(0.0) += r.vacancies;
        }
        let merged = merge_duplicates(records);
        let mut after = std::collections::BTreeMap::new();
        for r in &merged {
            *after.entry(r.market_id()).or_insert(0.0) += r.vacancies;
        }
        prop_assert_eq!(before.len(), after.len());
        for (k, v) in before {
            prop_assert!((after[&k] - v).abs() < 1e-9);
        }
    }

    #[test]
    fn hotels_never_flagged(records in arb_records(), seed in any::<u64>()) {
        let prices: Vec<f64> = records.iter().map(|r| r.price).collect();
        let mut distinct = prices.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        prop_assume!(distinct.len() >= 2);
        let model = kmeans_prices(&prices, 2, seed).unwrap();
        let flags = classify_sp(&records, &model.labels(&prices), 2);
        for (r, f) in records.iter().zip(flags) {
            prop_assert!(!(f && r.platform == Platform::Hotel));
        }
    }

    #[test]
    fn clustering_is_deterministic(prices in prop::collection::vec(0.01f64..2.0, 5..40), seed in any::<u64>()) {
        let mut distinct = prices.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        prop_assume!(distinct.len() >= 3);
        let a = kmeans_prices(&prices, 3, seed).unwrap();
        let b = kmeans_prices(&prices, 3, seed).unwrap();
        prop_assert_eq!(a.labels(&prices), b.labels(&prices));
        prop_assert_eq!(a.clone(), b);
        prop_assert!(a.centroids.windows(2).all(|w| w[0] > w[1]));
    }
}
