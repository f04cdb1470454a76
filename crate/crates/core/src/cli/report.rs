use std::collections::BTreeMap;

use serde::Serialize;

use super::artifacts::Workspace;
use super::config::PipelineConfig;
use super::stages::{MarketCosts, MarketEquilibria, COSTS, EQUILIBRIA, ESTIMATES, MARKETS, WELFARE};
use crate::dataio::{Dataset, MarketData};
use crate::error::{Error, Result};
use crate::estimation::{EstimationResult, Interval};
use crate::supply::{Platform, Scenario};
use crate::welfare::{percent_change, PercentChange, Surplus, WelfareReport, REPORT_UNIT_SCALE};

pub const TABLE6: &str = "reports/table6_demand.csv";
pub const TABLE8: &str = "reports/table8_prices_profits.csv";
pub const TABLE9: &str = "reports/table9_commission.csv";
pub const TABLE10: &str = "reports/table10_welfare.csv";
pub const FIG7: &str = "reports/fig7_price_profit_changes.csv";
pub const FIG8: &str = "reports/fig8_sp_count_price_change.csv";
pub const SUMMARY: &str = "reports/summary.json";

/// Seller type used to group report rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SellerGroup {
    SpHost,
    NonSpHost,
    Hotel,
}

impl SellerGroup {
    pub fn of(m: &MarketData, j: usize) -> Self {
        match (m.platforms[j], m.sp[j]) {
            (Platform::Hotel, _) => SellerGroup::Hotel,
            (Platform::Airbnb, true) => SellerGroup::SpHost,
            (Platform::Airbnb, false) => SellerGroup::NonSpHost,
        }
    }
}

#[derive(Debug, Serialize)]
struct Table6Row {
    parameter: String,
    estimate: f64,
    std_error: f64,
    ci_lower: f64,
    ci_upper: f64,
}

#[derive(Debug, Serialize)]
struct Table8Row {
    group: SellerGroup,
    scenario: Scenario,
    n: usize,
    mc_mean: f64,
    mc_sd: f64,
    price_mean: f64,
    price_sd: f64,
    profit_mean: f64,
    profit_sd: f64,
}

#[derive(Debug, Serialize)]
struct Table9Row {
    scenario: Scenario,
    n_markets: usize,
    mean: f64,
    sd: f64,
    total: f64,
    mean_change_pct: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Table10Row {
    measure: &'static str,
    baseline_mean: f64,
    self_preferencing_mean: f64,
    mean_change_pct: Option<f64>,
    annual_difference: f64,
}

#[derive(Debug, Serialize)]
struct Fig7Row {
    market_id: String,
    product: String,
    group: SellerGroup,
    price_change_pct: Option<f64>,
    profit_change_pct: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Fig8Row {
    market_id: String,
    n_sp_hosts: usize,
    mean_price_change_pct: Option<f64>,
    airbnb_price_change_pct: Option<f64>,
    hotel_price_change_pct: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub n_markets: usize,
    pub n_products: usize,
    pub alpha: f64,
    pub sigma: f64,
    pub rho: f64,
    pub gmm_objective: f64,
    pub efficient_weighting: bool,
    pub report_unit_scale: f64,
    pub mean_change_pct: PercentChange,
    pub baseline_mean: Surplus,
    pub self_preferencing_mean: Surplus,
    pub annual_difference: Surplus,
    pub max_cost_foc_residual: f64,
    pub max_equilibrium_residual: f64,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

fn mean_defined(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = v.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-product profit `(p - 1(j) mc) q` in report units.
fn product_profit(m: &MarketData, eq: &crate::supply::EquilibriumResult, j: usize) -> f64 {
    let indicator = if m.sp[j] { 0.0 } else { 1.0 };
    (eq.prices[j] - indicator * eq.mc[j]) * eq.quantities[j] * REPORT_UNIT_SCALE
}

fn pair<'a>(
    e: &'a MarketEquilibria,
) -> Result<(&'a crate::supply::EquilibriumResult, &'a crate::supply::EquilibriumResult)> {
    let get = |s: Scenario| {
        e.get(s).ok_or_else(|| {
            Error::Validation(format!(
                "market {} has no {s} equilibrium; run `counterfactual` with both scenarios",
                e.market_id
            ))
        })
    };
    Ok((get(Scenario::Baseline)?, get(Scenario::SelfPreferencing)?))
}

/// Writes every report table plus the JSON summary.
pub fn report(config: &PipelineConfig, ws: &Workspace) -> Result<Summary> {
    let result: EstimationResult = ws.read_json(ESTIMATES, "estimate")?;
    let dataset: Dataset = ws.read_json(MARKETS, "screen")?;
    let costs: Vec<MarketCosts> = ws.read_json(COSTS, "costs")?;
    let equilibria: Vec<MarketEquilibria> = ws.read_json(EQUILIBRIA, "counterfactual")?;
    let welfare: WelfareReport = ws.read_json(WELFARE, "welfare")?;
    if equilibria.len() != dataset.markets.len() {
        return Err(Error::Validation(
            "equilibrium artifact does not match the screened markets; rerun `counterfactual`".into(),
        ));
    }

    // demand estimates with bootstrap percentile intervals
    let intervals: Vec<Interval> = match result.bootstrap(config.bootstrap_draws, config.seed) {
        Ok(draws) if config.bootstrap_draws > 0 => draws.intervals(),
        Ok(_) => Vec::new(),
        Err(e) => {
            log::warn!("bootstrap unavailable ({e}); intervals left empty");
            Vec::new()
        }
    };
    let table6: Vec<Table6Row> = result
        .parameter_names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let ci = intervals.iter().find(|c| &c.name == name);
            Table6Row {
                parameter: name.clone(),
                estimate: result.estimates[i],
                std_error: result.standard_errors[i],
                ci_lower: ci.map_or(f64::NAN, |c| c.lower),
                ci_upper: ci.map_or(f64::NAN, |c| c.upper),
            }
        })
        .collect();
    ws.write_csv(TABLE6, "report", &table6)?;

    let mut groups: BTreeMap<(SellerGroup, u8), [Vec<f64>; 3]> = BTreeMap::new();
    let mut commission: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut commission_change = Vec::new();
    let mut fig7 = Vec::new();
    let mut fig8 = Vec::new();
    let mut max_eq_residual: f64 = 0.0;
    for (m, e) in dataset.markets.iter().zip(&equilibria) {
        let (base, cf) = pair(e)?;
        max_eq_residual = max_eq_residual.max(base.foc_residual).max(cf.foc_residual);
        for (s, eq) in [(0u8, base), (1u8, cf)] {
            for j in 0..m.len() {
                let cell = groups.entry((SellerGroup::of(m, j), s)).or_default();
                cell[0].push(eq.mc[j] * REPORT_UNIT_SCALE);
                cell[1].push(eq.prices[j] * REPORT_UNIT_SCALE);
                cell[2].push(product_profit(m, eq, j));
            }
            commission[s as usize].push(crate::supply::commission_revenue(eq) * REPORT_UNIT_SCALE);
        }
        commission_change.push(percent_change(
            crate::supply::commission_revenue(base),
            crate::supply::commission_revenue(cf),
        ));
        let price_change: Vec<Option<f64>> =
            (0..m.len()).map(|j| percent_change(base.prices[j], cf.prices[j])).collect();
        for j in 0..m.len() {
            fig7.push(Fig7Row {
                market_id: m.market_id.clone(),
                product: m.products[j].clone(),
                group: SellerGroup::of(m, j),
                price_change_pct: price_change[j],
                profit_change_pct: percent_change(product_profit(m, base, j), product_profit(m, cf, j)),
            });
        }
        let mut sp_hosts: Vec<&str> = (0..m.len()).filter(|&j| m.sp[j]).map(|j| m.firms[j].as_str()).collect();
        sp_hosts.sort_unstable();
        sp_hosts.dedup();
        let by = |keep: &dyn Fn(usize) -> bool| mean_defined((0..m.len()).filter(|&j| keep(j)).map(|j| price_change[j]));
        fig8.push(Fig8Row {
            market_id: m.market_id.clone(),
            n_sp_hosts: sp_hosts.len(),
            mean_price_change_pct: by(&|_| true),
            airbnb_price_change_pct: by(&|j| m.platforms[j] == Platform::Airbnb),
            hotel_price_change_pct: by(&|j| m.platforms[j] == Platform::Hotel),
        });
    }

    let scenario_of = |s: u8| if s == 0 { Scenario::Baseline } else { Scenario::SelfPreferencing };
    let table8: Vec<Table8Row> = groups
        .iter()
        .map(|(&(group, s), [mc, price, profit])| {
            let (mc_mean, mc_sd) = mean_sd(mc);
            let (price_mean, price_sd) = mean_sd(price);
            let (profit_mean, profit_sd) = mean_sd(profit);
            Table8Row {
                group,
                scenario: scenario_of(s),
                n: mc.len(),
                mc_mean,
                mc_sd,
                price_mean,
                price_sd,
                profit_mean,
                profit_sd,
            }
        })
        .collect();
    ws.write_csv(TABLE8, "report", &table8)?;

    let table9: Vec<Table9Row> = (0..2u8)
        .map(|s| {
            let v = &commission[s as usize];
            let (mean, sd) = mean_sd(v);
            Table9Row {
                scenario: scenario_of(s),
                n_markets: v.len(),
                mean,
                sd,
                total: v.iter().sum(),
                mean_change_pct: if s == 0 { None } else { mean_defined(commission_change.iter().copied()) },
            }
        })
        .collect();
    ws.write_csv(TABLE9, "report", &table9)?;

    let w = welfare.in_report_units();
    let row = |measure, f: fn(&Surplus) -> f64, c: Option<f64>| Table10Row {
        measure,
        baseline_mean: f(&w.baseline.mean),
        self_preferencing_mean: f(&w.counterfactual.mean),
        mean_change_pct: c,
        annual_difference: f(&w.annual_difference),
    };
    let table10 = vec![
        row("cs", |s| s.cs, w.mean_change.cs),
        row("ps", |s| s.ps, w.mean_change.ps),
        row("sw", |s| s.sw, w.mean_change.sw),
        row("commission", |s| s.commission, w.mean_change.commission),
    ];
    ws.write_csv(TABLE10, "report", &table10)?;
    ws.write_csv(FIG7, "report", &fig7)?;
    ws.write_csv(FIG8, "report", &fig8)?;

    let summary = Summary {
        n_markets: dataset.markets.len(),
        n_products: dataset.n_products(),
        alpha: result.params.alpha,
        sigma: result.params.sigma,
        rho: result.params.rho,
        gmm_objective: result.objective,
        efficient_weighting: result.efficient_weighting,
        report_unit_scale: REPORT_UNIT_SCALE,
        mean_change_pct: w.mean_change,
        baseline_mean: w.baseline.mean,
        self_preferencing_mean: w.counterfactual.mean,
        annual_difference: w.annual_difference,
        max_cost_foc_residual: costs.iter().map(|c| c.max_foc_residual).fold(0.0, f64::max),
        max_equilibrium_residual: max_eq_residual,
    };
    ws.write_json(SUMMARY, "report", &summary)?;
    Ok(summary)
}
