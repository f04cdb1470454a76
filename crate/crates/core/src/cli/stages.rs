use std::fs;

use chrono::NaiveDate;
use log::info;
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::artifacts::Workspace;
use super::config::PipelineConfig;
use crate::dataio::{
    apply_screens, build_markets, classify_sp, ingest_with, kmeans_prices, merge_duplicates, synthesize,
    write_listings, ClusterModel, ColumnMapping, Dataset, GroundTruth, ListingRecord, MarketData,
};
use crate::demand::{invert_shares, MeanUtilities, TasteDraws};
use crate::error::{Error, Result};
use crate::estimation::{estimate, EstimationResult};
use crate::supply::{recover_marginal_costs, solve_equilibrium, EquilibriumOptions, EquilibriumResult, Scenario};
use crate::welfare::{market_welfare, MarketComparison, WelfareReport};

pub const SYNTH_LISTINGS: &str = "synthetic/listings.csv";
pub const SYNTH_TRUTH: &str = "synthetic/ground_truth.json";
pub const LISTINGS: &str = "listings.json";
pub const CLUSTERS: &str = "clusters.json";
pub const SP_FLAGS: &str = "sp_flags.json";
pub const MARKETS: &str = "markets.json";
pub const ESTIMATES: &str = "estimates.json";
pub const COSTS: &str = "costs.json";
pub const EQUILIBRIA: &str = "equilibria.json";
pub const WELFARE: &str = "welfare.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterArtifact {
    pub model: ClusterModel,
    /// Cluster of each ingested record, in record order.
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpArtifact {
    pub flags: Vec<bool>,
    pub n_sp: usize,
    pub n_airbnb: usize,
}

/// Recovered costs of one market at the estimated demand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarketCosts {
    pub market_id: String,
    pub delta: DVector<f64>,
    pub mc: DVector<f64>,
    /// Largest absolute baseline first-order residual at observed prices.
    pub max_foc_residual: f64,
    pub condition_number: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarketEquilibria {
    pub market_id: String,
    pub date: NaiveDate,
    pub equilibria: Vec<EquilibriumResult>,
}

impl MarketEquilibria {
    pub fn get(&self, scenario: Scenario) -> Option<&EquilibriumResult> {
        self.equilibria.iter().find(|e| e.scenario == scenario)
    }
}

pub(crate) fn market_draws(config: &PipelineConfig, m: &MarketData) -> TasteDraws {
    TasteDraws::for_market(config.n_draws, config.seed, &m.market_id)
}

pub fn synth(config: &PipelineConfig, ws: &Workspace) -> Result<GroundTruth> {
    let data = synthesize(&config.synth)?;
    let mut buf = Vec::new();
    write_listings(&mut buf, &data.records)?;
    let path = ws.path(SYNTH_LISTINGS);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let header = format!(
        "# conductsim synth v{}\n# config_hash={}\n# seed={}\n",
        super::artifacts::ARTIFACT_VERSION,
        ws.config_hash,
        ws.seed
    );
    fs::write(&path, [header.as_bytes(), &buf].concat())?;
    info!("wrote {} ({} records)", path.display(), data.records.len());
    ws.write_json(SYNTH_TRUTH, "synth", &data.truth)?;
    Ok(data.truth)
}

pub fn ingest(config: &PipelineConfig, ws: &Workspace) -> Result<Vec<ListingRecord>> {
    let inputs = if config.inputs.is_empty() {
        vec![ws.require(SYNTH_LISTINGS, "synth")?]
    } else {
        config.inputs.clone()
    };
    let mapping = match &config.column_mapping {
        Some(p) => ColumnMapping::from_json(p)?,
        None => ColumnMapping::default(),
    };
    let mut records = Vec::new();
    for path in &inputs {
        if !path.exists() {
            return Err(Error::Config(format!("input {} does not exist", path.display())));
        }
        records.extend(ingest_with(path, &mapping)?);
    }
    let records = merge_duplicates(records);
    info!("ingested {} records from {} file(s)", records.len(), inputs.len());
    ws.write_json(LISTINGS, "ingest", &records)?;
    Ok(records)
}

pub fn cluster(config: &PipelineConfig, ws: &Workspace) -> Result<ClusterArtifact> {
    let records: Vec<ListingRecord> = ws.read_json(LISTINGS, "ingest")?;
    let prices: Vec<f64> = records.iter().map(|r| r.price).collect();
    let model = kmeans_prices(&prices, config.clusters, config.seed)?;
    let labels = model.labels(&prices);
    let artifact = ClusterArtifact { model, labels };
    ws.write_json(CLUSTERS, "cluster", &artifact)?;
    Ok(artifact)
}

pub fn classify(_config: &PipelineConfig, ws: &Workspace) -> Result<SpArtifact> {
    let records: Vec<ListingRecord> = ws.read_json(LISTINGS, "ingest")?;
    let clusters: ClusterArtifact = ws.read_json(CLUSTERS, "cluster")?;
    if clusters.labels.len() != records.len() {
        return Err(Error::dimension("cluster labels", records.len(), clusters.labels.len()));
    }
    let flags = classify_sp(&records, &clusters.labels, clusters.model.k());
    let artifact = SpArtifact {
        n_sp: flags.iter().filter(|f| **f).count(),
        n_airbnb: records.iter().filter(|r| r.platform == crate::supply::Platform::Airbnb).count(),
        flags,
    };
    info!("{} of {} Airbnb records use smart pricing", artifact.n_sp, artifact.n_airbnb);
    ws.write_json(SP_FLAGS, "classify-sp", &artifact)?;
    Ok(artifact)
}

pub fn screen(config: &PipelineConfig, ws: &Workspace) -> Result<Dataset> {
    let records: Vec<ListingRecord> = ws.read_json(LISTINGS, "ingest")?;
    let clusters: ClusterArtifact = ws.read_json(CLUSTERS, "cluster")?;
    let sp: SpArtifact = ws.read_json(SP_FLAGS, "classify-sp")?;
    let markets = build_markets(&records, &clusters.labels, &sp.flags, config.mode)?;
    let screened = apply_screens(&markets);
    info!(
        "{} markets with {} products after screening ({})",
        screened.markets.len(),
        screened.n_products(),
        config.mode
    );
    ws.write_json(MARKETS, "screen", &screened)?;
    Ok(screened)
}

pub fn estimation(config: &PipelineConfig, ws: &Workspace) -> Result<EstimationResult> {
    let dataset: Dataset = ws.read_json(MARKETS, "screen")?;
    let result = estimate(&dataset, &config.resolved().estimation)?;
    info!(
        "alpha={:.4} sigma={:.4} rho={:.4} objective={:.3e}",
        result.params.alpha, result.params.sigma, result.params.rho, result.objective
    );
    ws.write_json(ESTIMATES, "estimate", &result)?;
    Ok(result)
}

pub fn costs(config: &PipelineConfig, ws: &Workspace) -> Result<Vec<MarketCosts>> {
    let dataset: Dataset = ws.read_json(MARKETS, "screen")?;
    let result: EstimationResult = ws.read_json(ESTIMATES, "estimate")?;
    let inversion = config.estimation.inversion;
    let out = dataset
        .markets
        .par_iter()
        .map(|m| {
            let draws = market_draws(config, m);
            let delta = invert_shares(&m.shares(), &result.params, &m.nests, &draws, &m.prices, None, &inversion)
                .map_err(|e| e.in_market(&m.market_id, "share inversion"))?
                .delta;
            let ctx = m.demand_context(&result.params, &draws);
            let jac = ctx.jacobian(&delta).map_err(|e| e.in_market(&m.market_id, "demand jacobian"))?;
            let conduct = m.conduct(Scenario::Baseline, config.sp_grouping)?;
            let costs = recover_marginal_costs(&m.prices, &m.quantities, &jac, &conduct)
                .map_err(|e| e.in_market(&m.market_id, "cost recovery"))?;
            Ok(MarketCosts {
                market_id: m.market_id.clone(),
                delta: delta.0,
                mc: costs.mc,
                max_foc_residual: costs.foc_residuals.amax(),
                condition_number: costs.condition_number,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ws.write_json(COSTS, "costs", &out)?;
    Ok(out)
}

fn check_alignment(dataset: &Dataset, costs: &[MarketCosts]) -> Result<()> {
    if dataset.markets.len() != costs.len()
        || dataset.markets.iter().zip(costs).any(|(m, c)| m.market_id != c.market_id)
    {
        return Err(Error::Validation(
            "cost artifact does not match the screened markets; rerun `costs`".into(),
        ));
    }
    Ok(())
}

pub fn counterfactual(config: &PipelineConfig, ws: &Workspace) -> Result<Vec<MarketEquilibria>> {
    let dataset: Dataset = ws.read_json(MARKETS, "screen")?;
    let result: EstimationResult = ws.read_json(ESTIMATES, "estimate")?;
    let costs: Vec<MarketCosts> = ws.read_json(COSTS, "costs")?;
    check_alignment(&dataset, &costs)?;
    let options = EquilibriumOptions::default();
    let out = dataset
        .markets
        .par_iter()
        .zip(costs.par_iter())
        .map(|(m, c)| {
            let ctx = m.demand_context(&result.params, &market_draws(config, m));
            let delta = MeanUtilities(c.delta.clone());
            let equilibria = config
                .scenarios
                .iter()
                .map(|&scenario| {
                    let conduct = m.conduct(scenario, config.sp_grouping)?;
                    solve_equilibrium(&c.mc, &conduct, &ctx, &delta, Some(&m.prices), &options)
                        .map_err(|e| e.in_market(&m.market_id, "counterfactual"))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(MarketEquilibria {
                market_id: m.market_id.clone(),
                date: m.date,
                equilibria,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ws.write_json(EQUILIBRIA, "counterfactual", &out)?;
    Ok(out)
}

pub fn welfare(config: &PipelineConfig, ws: &Workspace) -> Result<WelfareReport> {
    let dataset: Dataset = ws.read_json(MARKETS, "screen")?;
    let result: EstimationResult = ws.read_json(ESTIMATES, "estimate")?;
    let equilibria: Vec<MarketEquilibria> = ws.read_json(EQUILIBRIA, "counterfactual")?;
    if equilibria.len() != dataset.markets.len() {
        return Err(Error::Validation(
            "equilibrium artifact does not match the screened markets; rerun `counterfactual`".into(),
        ));
    }
    let rows = dataset
        .markets
        .par_iter()
        .zip(equilibria.par_iter())
        .map(|(m, e)| {
            let ctx = m.demand_context(&result.params, &market_draws(config, m));
            let surplus = |scenario: Scenario| -> Result<_> {
                let eq = e.get(scenario).ok_or_else(|| {
                    Error::Validation(format!(
                        "market {} has no {scenario} equilibrium; run `counterfactual` with both scenarios",
                        m.market_id
                    ))
                })?;
                let conduct = m.conduct(scenario, config.sp_grouping)?;
                market_welfare(eq, &ctx, &conduct).map_err(|err| err.in_market(&m.market_id, "welfare"))
            };
            Ok(MarketComparison::new(
                m.market_id.clone(),
                m.date,
                surplus(Scenario::Baseline)?,
                surplus(Scenario::SelfPreferencing)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = WelfareReport::new(rows);
    ws.write_json(WELFARE, "welfare", &report)?;
    Ok(report)
}
