//! Consumer, producer and social surplus per market and scenario.
//!
//! Values are kept in model price units (100,000 yen) until a report is
//! converted with [`WelfareReport::in_report_units`].

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::demand::{consumer_surplus, DemandContext, MeanUtilities, SurplusPolicy};
use crate::error::{Error, Result};
use crate::supply::{commission_revenue, firm_profits, ConductSpec, EquilibriumResult};

/// Model price units per report unit: prices are in 100,000 yen, reports
/// in 10,000 yen.
pub const REPORT_UNIT_SCALE: f64 = 10.0;
pub const DAYS_PER_YEAR: f64 = 365.0;
/// Largest first-order residual an equilibrium may carry into welfare.
pub const MAX_FOC_RESIDUAL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Surplus {
    pub cs: f64,
    pub ps: f64,
    pub sw: f64,
    /// Platform commission, reported beside producer surplus rather than in it.
    pub commission: f64,
}

impl Surplus {
    pub fn new(cs: f64, ps: f64, commission: f64) -> Self {
        Self {
            cs,
            ps,
            sw: cs + ps,
            commission,
        }
    }

    fn fields(&self) -> [f64; 4] {
        [self.cs, self.ps, self.sw, self.commission]
    }

    fn from_fields(v: [f64; 4]) -> Self {
        Self {
            cs: v[0],
            ps: v[1],
            sw: v[2],
            commission: v[3],
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_fields(self.fields().map(|x| x * factor))
    }

    pub fn add(&self, other: &Surplus) -> Self {
        let (a, b) = (self.fields(), other.fields());
        Self::from_fields([0, 1, 2, 3].map(|i| a[i] + b[i]))
    }
}

/// Per-market welfare at one equilibrium.
pub fn market_welfare(eq: &EquilibriumResult, demand: &DemandContext, conduct: &ConductSpec) -> Result<Surplus> {
    if !(eq.foc_residual <= MAX_FOC_RESIDUAL) {
        return Err(Error::Validation(format!(
            "equilibrium residual {:.3e} exceeds {MAX_FOC_RESIDUAL:.0e}",
            eq.foc_residual
        )));
    }
    let cs = consumer_surplus(
        &MeanUtilities(eq.delta.clone()),
        &eq.prices,
        &demand.params,
        &demand.nests,
        &demand.draws,
        SurplusPolicy::default(),
    )?;
    let ps = firm_profits(eq, conduct).values().sum();
    Ok(Surplus::new(cs.market_total(demand.market_size), ps, commission_revenue(eq)))
}

/// `100 (cf - base) / base`, missing when the baseline is zero.
pub fn percent_change(base: f64, cf: f64) -> Option<f64> {
    (base != 0.0 && base.is_finite() && cf.is_finite()).then(|| 100.0 * (cf - base) / base)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PercentChange {
    pub cs: Option<f64>,
    pub ps: Option<f64>,
    pub sw: Option<f64>,
    pub commission: Option<f64>,
}

pub fn scenario_diff(base: &Surplus, cf: &Surplus) -> PercentChange {
    PercentChange {
        cs: percent_change(base.cs, cf.cs),
        ps: percent_change(base.ps, cf.ps),
        sw: percent_change(base.sw, cf.sw),
        commission: percent_change(base.commission, cf.commission),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketComparison {
    pub market_id: String,
    pub date: NaiveDate,
    pub baseline: Surplus,
    pub counterfactual: Surplus,
    pub change: PercentChange,
}

impl MarketComparison {
    pub fn new(market_id: impl Into<String>, date: NaiveDate, baseline: Surplus, counterfactual: Surplus) -> Self {
        Self {
            market_id: market_id.into(),
            date,
            change: scenario_diff(&baseline, &counterfactual),
            baseline,
            counterfactual,
        }
    }
}

/// Cross-market summary of one scenario.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_markets: usize,
    pub n_days: usize,
    pub mean: Surplus,
    pub sd: Surplus,
    pub total: Surplus,
    pub mean_daily_total: Surplus,
    /// `mean_daily_total * 365`.
    pub annual: Surplus,
}

/// Summarizes dated per-market values; markets sharing a date form one day.
pub fn aggregate(rows: &[(NaiveDate, Surplus)]) -> Aggregate {
    let n = rows.len();
    if n == 0 {
        return Aggregate::default();
    }
    let total = rows.iter().fold(Surplus::default(), |acc, (_, s)| acc.add(s));
    let mean = total.scaled(1.0 / n as f64);
    let sd = if n > 1 {
        let m = mean.fields();
        let mut ss = [0.0; 4];
        for (_, s) in rows {
            for (i, v) in s.fields().iter().enumerate() {
                ss[i] += (v - m[i]).powi(2);
            }
        }
        Surplus::from_fields(ss.map(|x| (x / (n - 1) as f64).sqrt()))
    } else {
        Surplus::default()
    };
    let mut days: BTreeMap<NaiveDate, Surplus> = BTreeMap::new();
    for (d, s) in rows {
        let e = days.entry(*d).or_default();
        *e = e.add(s);
    }
    let mean_daily_total = days
        .values()
        .fold(Surplus::default(), |acc, s| acc.add(s))
        .scaled(1.0 / days.len() as f64);
    Aggregate {
        n_markets: n,
        n_days: days.len(),
        mean,
        sd,
        total,
        mean_daily_total,
        annual: mean_daily_total.scaled(DAYS_PER_YEAR),
    }
}

/// Mean of the defined per-market percent changes.
pub fn mean_percent_change(changes: &[PercentChange]) -> PercentChange {
    let mean = |f: fn(&PercentChange) -> Option<f64>| {
        let v: Vec<f64> = changes.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    PercentChange {
        cs: mean(|c| c.cs),
        ps: mean(|c| c.ps),
        sw: mean(|c| c.sw),
        commission: mean(|c| c.commission),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelfareReport {
    /// Multiplier from model units to the units of every value below.
    pub unit_scale: f64,
    pub markets: Vec<MarketComparison>,
    pub baseline: Aggregate,
    pub counterfactual: Aggregate,
    pub mean_change: PercentChange,
    /// Annualized counterfactual minus baseline.
    pub annual_difference: Surplus,
}

impl WelfareReport {
    pub fn new(markets: Vec<MarketComparison>) -> Self {
        let baseline = aggregate(&markets.iter().map(|m| (m.date, m.baseline)).collect::<Vec<_>>());
        let counterfactual = aggregate(&markets.iter().map(|m| (m.date, m.counterfactual)).collect::<Vec<_>>());
        let mean_change = mean_percent_change(&markets.iter().map(|m| m.change).collect::<Vec<_>>());
        Self {
            unit_scale: 1.0,
            annual_difference: counterfactual.annual.add(&baseline.annual.scaled(-1.0)),
            markets,
            baseline,
            counterfactual,
            mean_change,
        }
    }

    /// Rescales every level to 10,000 yen; percent changes are unit-free.
    pub fn in_report_units(&self) -> Self {
        let k = REPORT_UNIT_SCALE / self.unit_scale;
        let agg = |a: &Aggregate| Aggregate {
            mean: a.mean.scaled(k),
            sd: a.sd.scaled(k),
            total: a.total.scaled(k),
            mean_daily_total: a.mean_daily_total.scaled(k),
            annual: a.annual.scaled(k),
            ..*a
        };
        Self {
            unit_scale: REPORT_UNIT_SCALE,
            markets: self
                .markets
                .iter()
                .map(|m| MarketComparison {
                    baseline: m.baseline.scaled(k),
                    counterfactual: m.counterfactual.scaled(k),
                    ..m.clone()
                })
                .collect(),
            baseline: agg(&self.baseline),
            counterfactual: agg(&self.counterfactual),
            mean_change: self.mean_change,
            annual_difference: self.annual_difference.scaled(k),
        }
    }
}
