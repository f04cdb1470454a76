use std::collections::BTreeMap;

use chrono::{Datelike, Days, NaiveDate};
use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::market::{characteristic_names, nest_for, Dataset, MarketData};
use super::records::{market_id, weighted_beds, ListingRecord};
use super::screen::SHARE_THRESHOLD;
use crate::demand::{
    compute_shares, derive_seed, invert_shares, DemandContext, DemandParams, InversionOptions, MeanUtilities, NestStructure,
    TasteDraws, DEFAULT_DRAWS,
};
use crate::error::{Error, Result};
use crate::supply::profits_at;
use crate::supply::{
    build_conduct, recover_marginal_costs, solve_equilibrium, EquilibriumOptions, Platform, Scenario, SpGrouping,
};

/// How synthetic prices and costs are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthPricing {
    /// Draw prices, back out the marginal costs that make them a baseline
    /// equilibrium, and keep the market only if every seller is at a local
    /// optimum.
    #[default]
    Inverse,
    /// Draw marginal costs and solve the baseline equilibrium from them.
    Forward,
}

/// Settings for synthetic markets. Defaults use the headline RCNL estimates
/// as the true demand parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_markets: usize,
    pub n_wards: usize,
    pub airbnb_per_ward: usize,
    pub hotels_per_ward: usize,
    /// Probability a listing is offered in a given market.
    pub availability: f64,
    /// Probability an Airbnb listing in one of the two cheapest tiers uses
    /// smart pricing.
    pub sp_adoption: f64,
    pub start_date: NaiveDate,
    pub alpha: f64,
    pub sigma: f64,
    pub rho: f64,
    /// Coefficients on cleanliness, communication, location, overall, airbnb.
    pub beta: Vec<f64>,
    pub intercept: f64,
    /// Standard deviation of city and month effects.
    pub fe_scale: f64,
    /// Standard deviation of the structural error; zero gives noiseless data.
    pub xi_sd: f64,
    pub pricing: SynthPricing,
    /// Base price of price tiers 1 (dearest) to 5 under inverse pricing.
    pub tier_prices: [f64; 5],
    pub bed_price: f64,
    /// Loading of drawn prices on the structural error.
    pub price_xi: f64,
    /// Price cut per additional listing in the same nest.
    pub nest_rival_discount: f64,
    pub price_sd: f64,
    /// Standard deviation of the marginal-cost shock under forward pricing.
    pub cost_sd: f64,
    /// Base marginal cost of price tiers 1 (dearest) to 5 under forward
    /// pricing.
    pub tier_costs: [f64; 5],
    pub bed_cost: f64,
    pub n_draws: usize,
    pub seed: u64,
    /// Redraws allowed per market before giving up.
    pub max_retries: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_markets: 200,
            n_wards: 5,
            airbnb_per_ward: 7,
            hotels_per_ward: 3,
            availability: 0.85,
            sp_adoption: 0.0,
            start_date: NaiveDate::from_ymd_opt(2023, 7, 1).unwrap_or_default(),
            alpha: -0.928,
            sigma: -0.559,
            rho: 0.436,
            beta: vec![0.25, 0.2, 0.15, 0.3, 0.3],
            intercept: -6.5,
            fe_scale: 0.15,
            xi_sd: 0.1,
            pricing: SynthPricing::Inverse,
            tier_prices: [0.9, 0.55, 0.35, 0.22, 0.12],
            bed_price: 0.08,
            price_xi: 0.05,
            nest_rival_discount: 0.05,
            price_sd: 0.06,
            cost_sd: 0.05,
            tier_costs: [0.8, 0.45, 0.2, 0.05, 0.0],
            bed_cost: 0.05,
            n_draws: DEFAULT_DRAWS,
            seed: 2024,
            max_retries: 100,
        }
    }
}

impl SynthConfig {
    /// Forward-solved markets with smart-pricing hosts and a price
    /// coefficient that stays negative for nearly every consumer, so that
    /// both the baseline and the self-preferencing games have interior
    /// equilibria.
    pub fn with_smart_pricing() -> Self {
        Self {
            sigma: -0.15,
            sp_adoption: 0.7,
            pricing: SynthPricing::Forward,
            ..Self::default()
        }
    }
}

/// True primitives of one synthetic market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketTruth {
    pub market_id: String,
    pub delta: DVector<f64>,
    pub xi: DVector<f64>,
    pub mc: DVector<f64>,
    pub tiers: Vec<usize>,
    pub sp: Vec<bool>,
    pub attempts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub alpha: f64,
    pub sigma: f64,
    pub rho: f64,
    pub beta: BTreeMap<String, f64>,
    pub fixed_effects: BTreeMap<String, f64>,
    pub markets: Vec<MarketTruth>,
    pub config: SynthConfig,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub records: Vec<ListingRecord>,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone)]
struct Listing {
    id: String,
    host: String,
    platform: Platform,
    tier: usize,
    ratings: [f64; 4],
    beds: f64,
    rooms: f64,
    n_reviews: f64,
    sp: bool,
}

fn listing_pool(config: &SynthConfig, ward: &str, rng: &mut ChaCha8Rng) -> Vec<Listing> {
    let mut out = Vec::new();
    let total = config.airbnb_per_ward + config.hotels_per_ward;
    for i in 0..total {
        let airbnb = i < config.airbnb_per_ward;
        let tier = if airbnb {
            [2, 3, 3, 4, 4, 5, 5][rng.random_range(0..7)]
        } else {
            rng.random_range(1..=3)
        };
        let base = rng.random_range(3.6..4.9);
        let ratings = [0; 4].map(|_| (base + rng.random_range(-0.15..0.15_f64)).clamp(1.0, 5.0));
        let mut beds = [0.0; 8];
        beds[0] = f64::from(rng.random_range(0..3u8));
        beds[2] = f64::from(rng.random_range(0..2u8));
        beds[3] = f64::from(rng.random_range(0..2u8));
        if beds.iter().sum::<f64>() == 0.0 {
            beds[0] = 1.0;
        }
        // the first Airbnb hosts each run two listings
        let host = if airbnb {
            format!("host-{ward}-{}", if i < 4 { i / 2 } else { i })
        } else {
            format!("hotel-{ward}-{i}")
        };
        out.push(Listing {
            id: format!("{}-{ward}-{i:02}", if airbnb { "abnb" } else { "bkg" }),
            host,
            platform: if airbnb { Platform::Airbnb } else { Platform::Hotel },
            tier,
            ratings,
            beds: weighted_beds(&beds),
            rooms: if airbnb {
                f64::from(rng.random_range(1..=3u8))
            } else {
                f64::from(rng.random_range(4..=12u8))
            },
            n_reviews: f64::from(rng.random_range(0..200u16)),
            sp: airbnb && tier >= 4 && rng.random_bool(config.sp_adoption),
        });
    }
    out
}

const MIN_PRICE: f64 = 0.02;
const PROBE_STEP: f64 = 1e-3;

/// True when no seller raises its profit by moving one of its prices by
/// `PROBE_STEP` either way.
fn is_local_optimum(
    ctx: &DemandContext,
    delta: &MeanUtilities,
    prices: &DVector<f64>,
    mc: &DVector<f64>,
    conduct: &crate::supply::ConductSpec,
) -> bool {
    let profits = |p: &DVector<f64>| -> Option<BTreeMap<String, f64>> {
        let shares = compute_shares(&ctx.reprice(delta, p), p, &ctx.params, &ctx.nests, &ctx.draws).ok()?;
        Some(profits_at(p, &(shares * ctx.market_size), mc, conduct))
    };
    let Some(base) = profits(prices) else {
        return false;
    };
    for j in 0..prices.len() {
        for sign in [-1.0, 1.0] {
            let mut p = prices.clone();
            p[j] += sign * PROBE_STEP;
            if p[j] < 0.0 {
                continue;
            }
            let Some(after) = profits(&p) else {
                return false;
            };
            let firm = &conduct.firms[j];
            if after[firm] - base[firm] > 1e-12 * base[firm].abs().max(1.0) {
                return false;
            }
        }
    }
    true
}

struct Built {
    market: MarketData,
    truth: MarketTruth,
}

fn build_market(
    config: &SynthConfig,
    params: &DemandParams,
    id: &str,
    date: NaiveDate,
    ward: &str,
    pool: &[Listing],
    fe: f64,
) -> Result<Built> {
    let draws = TasteDraws::for_market(config.n_draws, config.seed, id);
    let xi_dist = Normal::new(0.0, config.xi_sd.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let cost_dist = Normal::new(0.0, config.cost_sd.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let price_dist = Normal::new(0.0, config.price_sd.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut last_error = None;
    for attempt in 0..=config.max_retries {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &format!("{id}#{attempt}")));
        let offered: Vec<&Listing> = pool.iter().filter(|_| rng.random_bool(config.availability)).collect();
        if offered.len() < 2 {
            continue;
        }
        let n = offered.len();
        let sp: Vec<bool> = offered
            .iter()
            .map(|l| l.sp)
            .collect();
        let xi = DVector::from_fn(n, |_, _| xi_dist.sample(&mut rng));
        let mut chars = DMatrix::zeros(n, characteristic_names().len());
        for (j, l) in offered.iter().enumerate() {
            for c in 0..4 {
                chars[(j, c)] = l.ratings[c];
            }
            chars[(j, 4)] = f64::from(l.platform == Platform::Airbnb);
            chars[(j, 5)] = l.beds;
        }
        let drawn_costs = DVector::from_fn(n, |j, _| {
            let shock: f64 = cost_dist.sample(&mut rng);
            if sp[j] {
                0.0
            } else {
                config.tier_costs[offered[j].tier - 1] + config.bed_cost * offered[j].beds + shock
            }
        });
        let start = match config.pricing {
            SynthPricing::Forward => drawn_costs.map(|c| c.max(0.0) + 0.5),
            SynthPricing::Inverse => DVector::from_fn(n, |j, _| {
                let noise: f64 = price_dist.sample(&mut rng);
                let nest = nest_for(offered[j].tier, offered[j].platform, true);
                let rivals = offered
                    .iter()
                    .filter(|l| nest_for(l.tier, l.platform, true) == nest)
                    .count()
                    - 1;
                (config.tier_prices[offered[j].tier - 1] - config.nest_rival_discount * rivals as f64
                    + config.bed_price * offered[j].beds
                    + config.price_xi * xi[j]
                    + noise)
                    .max(MIN_PRICE)
            }),
        };
        let quality = DVector::from_fn(n, |j, _| {
            config.intercept
                + fe
                + (0..5).map(|c| config.beta.get(c).copied().unwrap_or(0.0) * chars[(j, c)]).sum::<f64>()
                + xi[j]
        });
        let delta0 = MeanUtilities(&quality + &start * config.alpha);
        let nests = NestStructure::new(offered.iter().map(|l| nest_for(l.tier, l.platform, true)).collect())?;
        let rooms = DVector::from_iterator(n, offered.iter().map(|l| l.rooms));
        let size = crate::demand::market_size_from_rooms(rooms.sum());
        let ctx = DemandContext {
            prices: start,
            params: params.clone(),
            nests: nests.clone(),
            draws: draws.clone(),
            market_size: size,
        };
        let firms: Vec<String> = offered.iter().map(|l| l.host.clone()).collect();
        let platforms: Vec<Platform> = offered.iter().map(|l| l.platform).collect();
        let conduct = build_conduct(&firms, &platforms, &sp, Scenario::Baseline, SpGrouping::PerHost)?;
        let mc = match config.pricing {
            SynthPricing::Forward => drawn_costs,
            SynthPricing::Inverse => {
                let quantities = ctx.shares(&delta0)? * size;
                let jac = ctx.jacobian(&delta0)?;
                match recover_marginal_costs(&ctx.prices, &quantities, &jac, &conduct) {
                    Ok(r) => r.mc,
                    Err(_) => continue,
                }
            }
        };
        let eq = match solve_equilibrium(&mc, &conduct, &ctx, &delta0, None, &EquilibriumOptions::default()) {
            Ok(eq) => eq,
            Err(e) => {
                debug!("market {id} attempt {attempt}: {e}");
                last_error = Some(e);
                continue;
            }
        };
        if !is_local_optimum(&ctx, &delta0, &eq.prices, &mc, &conduct) {
            debug!("market {id} attempt {attempt}: a seller gains from a unilateral deviation");
            continue;
        }
        if eq.shares.iter().any(|&s| s < SHARE_THRESHOLD) {
            continue;
        }

        // the market must survive both roundtrips before it is kept
        let inverted = invert_shares(
            &eq.shares,
            params,
            &nests,
            &draws,
            &eq.prices,
            None,
            &InversionOptions::default(),
        )?;
        if (&inverted.delta.0 - &eq.delta).amax() > 1e-10 {
            continue;
        }
        let at_eq = DemandContext {
            prices: eq.prices.clone(),
            ..ctx
        };
        let jac = at_eq.jacobian(&MeanUtilities(eq.delta.clone()))?;
        let recovered = match recover_marginal_costs(&eq.prices, &eq.quantities, &jac, &conduct) {
            Ok(r) => r,
            Err(_) => continue,
        };
        if (&recovered.mc - &mc).amax() > 1e-8 {
            continue;
        }

        let market = MarketData {
            market_id: id.to_string(),
            date,
            ward: ward.to_string(),
            products: offered.iter().map(|l| l.id.clone()).collect(),
            firms,
            platforms,
            prices: eq.prices.clone(),
            characteristics: chars,
            quantities: eq.quantities.clone(),
            rooms,
            clusters: offered.iter().map(|l| l.tier).collect(),
            nests,
            sp: sp.clone(),
        };
        return Ok(Built {
            market,
            truth: MarketTruth {
                market_id: id.to_string(),
                delta: eq.delta,
                xi,
                mc,
                tiers: offered.iter().map(|l| l.tier).collect(),
                sp,
                attempts: attempt + 1,
            },
        });
    }
    Err(last_error
        .unwrap_or_else(|| Error::Validation(format!("no admissible draw after {} attempts", config.max_retries + 1)))
        .in_market(id, "synthesis"))
}

/// Generates markets from known primitives by solving baseline equilibria.
///
/// Every market is redrawn until all of its shares clear the screening
/// threshold and both the share inversion and the cost recovery reproduce
/// the truth.
pub fn synthesize(config: &SynthConfig) -> Result<SyntheticData> {
    if config.n_wards == 0 || config.n_markets == 0 {
        return Err(Error::Config("n_markets and n_wards must be positive".into()));
    }
    if !(0.0..=1.0).contains(&config.availability) {
        return Err(Error::Config("availability must lie in [0, 1]".into()));
    }
    let params = DemandParams::new(config.alpha, config.sigma, config.rho)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let fe_dist = Normal::new(0.0, config.fe_scale.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;

    let wards: Vec<String> = (1..=config.n_wards).map(|w| format!("ward-{w:02}")).collect();
    let pools: Vec<Vec<Listing>> = wards.iter().map(|w| listing_pool(config, w, &mut rng)).collect();
    let mut fixed_effects = BTreeMap::new();
    for w in &wards {
        fixed_effects.insert(format!("city={w}"), fe_dist.sample(&mut rng));
    }
    let n_days = config.n_markets.div_ceil(config.n_wards);
    let dates: Vec<NaiveDate> = (0..n_days as u64)
        .map(|d| config.start_date.checked_add_days(Days::new(d)).unwrap_or(config.start_date))
        .collect();
    for d in &dates {
        fixed_effects
            .entry(format!("month={:02}", d.month()))
            .or_insert_with(|| fe_dist.sample(&mut rng));
    }
    for d in &dates {
        let weekend = matches!(d.weekday(), chrono::Weekday::Fri | chrono::Weekday::Sat);
        fixed_effects
            .entry(format!("dow={}", d.weekday()))
            .or_insert(if weekend { config.fe_scale } else { 0.0 });
    }

    let slots: Vec<(NaiveDate, usize)> = dates
        .iter()
        .flat_map(|&d| (0..config.n_wards).map(move |w| (d, w)))
        .take(config.n_markets)
        .collect();
    let built: Vec<Result<Built>> = slots
        .par_iter()
        .map(|&(date, w)| {
            let id = market_id(date, &wards[w]);
            let fe = fixed_effects[&format!("city={}", wards[w])]
                + fixed_effects[&format!("month={:02}", date.month())]
                + fixed_effects[&format!("dow={}", date.weekday())];
            build_market(config, &params, &id, date, &wards[w], &pools[w], fe)
        })
        .collect();

    let mut markets = Vec::with_capacity(built.len());
    let mut truths = Vec::with_capacity(built.len());
    let mut records = Vec::new();
    for b in built {
        let b = b?;
        let pool = &pools[wards.iter().position(|w| *w == b.market.ward).unwrap_or(0)];
        for j in 0..b.market.len() {
            let l = pool.iter().find(|l| l.id == b.market.products[j]).ok_or_else(|| {
                Error::Validation(format!("listing {} missing from its pool", b.market.products[j]))
            })?;
            records.push(ListingRecord {
                date: b.market.date,
                ward: b.market.ward.clone(),
                listing_id: l.id.clone(),
                host_id: l.host.clone(),
                platform: l.platform,
                price: b.market.prices[j],
                n_reviews: l.n_reviews,
                ratings: l.ratings,
                beds: l.beds,
                vacancies: b.market.quantities[j],
                rooms: l.rooms,
            });
        }
        markets.push(b.market);
        truths.push(b.truth);
    }
    markets.sort_by(|a, b| a.market_id.cmp(&b.market_id));
    truths.sort_by(|a, b| a.market_id.cmp(&b.market_id));
    records.sort_by(|a, b| a.market_id().cmp(&b.market_id()));
    info!(
        "synthesized {} markets, {} products",
        markets.len(),
        markets.iter().map(MarketData::len).sum::<usize>()
    );

    let names = characteristic_names();
    let beta = names
        .iter()
        .take(5)
        .zip(&config.beta)
        .map(|(n, b)| (n.clone(), *b))
        .chain(std::iter::once(("const".to_string(), config.intercept)))
        .collect();
    Ok(SyntheticData {
        dataset: Dataset::new(markets),
        records,
        truth: GroundTruth {
            alpha: config.alpha,
            sigma: config.sigma,
            rho: config.rho,
            beta,
            fixed_effects,
            markets: truths,
            config: config.clone(),
        },
    })
}
