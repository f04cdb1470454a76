//! Independent reference computations shared by the integration suites.
//!
//! Nothing here calls into the share kernel except through the public
//! `compute_shares`, so these stay usable as oracles for the analytic paths.
#![allow(dead_code)]

use conductsim::demand::{compute_shares, DemandContext, DemandParams, MeanUtilities, NestStructure, TasteDraws};
use conductsim::supply::{ConductSpec, EquilibriumResult, Platform, Scenario};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Two-level nested logit shares by direct exponentiation (no log-sum-exp).
pub fn nested_logit_closed_form(delta: &[f64], groups: &[usize], rho: f64) -> Vec<f64> {
    let n_groups = groups.iter().copied().max().unwrap_or(0);
    let mut group_sum = vec![0.0; n_groups + 1];
    for (d, &g) in delta.iter().zip(groups) {
        group_sum[g] += (d / (1.0 - rho)).exp();
    }
    let denominator: f64 =
        1.0 + group_sum.iter().skip(1).filter(|s| **s > 0.0).map(|s| s.powf(1.0 - rho)).sum::<f64>();
    delta
        .iter()
        .zip(groups)
        .map(|(d, &g)| {
            let within = (d / (1.0 - rho)).exp() / group_sum[g];
            within * group_sum[g].powf(1.0 - rho) / denominator
        })
        .collect()
}

/// Multinomial logit shares.
pub fn logit_closed_form(delta: &[f64]) -> Vec<f64> {
    let denominator: f64 = 1.0 + delta.iter().map(|d| d.exp()).sum::<f64>();
    delta.iter().map(|d| d.exp() / denominator).collect()
}

/// Quantities as a function of prices, with `delta` shifting by `alpha`.
pub fn quantities_at(ctx: &DemandContext, delta: &MeanUtilities, prices: &DVector<f64>) -> DVector<f64> {
    let moved = MeanUtilities(&delta.0 + (prices - &ctx.prices) * ctx.params.alpha);
    compute_shares(&moved, prices, &ctx.params, &ctx.nests, &ctx.draws).unwrap() * ctx.market_size
}

/// Central finite-difference demand Jacobian, `out[(j, k)] = dq_j / dp_k`.
pub fn finite_difference_jacobian(ctx: &DemandContext, delta: &MeanUtilities, step: f64) -> DMatrix<f64> {
    let n = ctx.prices.len();
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut up = ctx.prices.clone();
        up[k] += step;
        let mut down = ctx.prices.clone();
        down[k] -= step;
        let diff = (quantities_at(ctx, delta, &up) - quantities_at(ctx, delta, &down)) / (2.0 * step);
        out.set_column(k, &diff);
    }
    out
}

/// Simulated expected maximum utility minus Euler's constant, in utils,
/// with its Monte Carlo standard error. Inside utilities are `delta`; the
/// outside good has utility zero.
pub fn gumbel_expected_max(delta: &[f64], n: usize, seed: u64) -> (f64, f64) {
    let mut rng = rng(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n {
        let gumbel = |rng: &mut ChaCha8Rng| {
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            -(-u.ln()).ln()
        };
        let mut best = gumbel(&mut rng);
        for d in delta {
            best = best.max(d + gumbel(&mut rng));
        }
        sum += best;
        sum_sq += best * best;
    }
    let mean = sum / n as f64;
    let var = sum_sq / n as f64 - mean * mean;
    (mean - EULER_GAMMA, (var / n as f64).sqrt())
}

/// Random demand instance.
pub struct Instance {
    pub ctx: DemandContext,
    pub delta: MeanUtilities,
}

pub fn random_instance(rng: &mut ChaCha8Rng, n: usize, sigma: f64, rho: f64, n_draws: usize) -> Instance {
    let n_groups = rng.random_range(1..=3usize.min(n.max(1)));
    let groups: Vec<usize> = (0..n).map(|_| rng.random_range(1..=n_groups)).collect();
    let prices = DVector::from_fn(n, |_, _| rng.random_range(0.1..1.5));
    let delta = MeanUtilities(DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0)));
    let alpha = rng.random_range(-2.0..-0.5);
    let ctx = DemandContext {
        prices,
        params: DemandParams::new(alpha, sigma, rho).unwrap(),
        nests: NestStructure::new(groups).unwrap(),
        draws: TasteDraws::new(n_draws, rng.random()),
        market_size: rng.random_range(5.0..50.0),
    };
    Instance { ctx, delta }
}

/// Objective of the player controlling row `j`, with explicit player sets.
pub fn player_objective(
    j: usize,
    conduct: &ConductSpec,
    prices: &DVector<f64>,
    quantities: &DVector<f64>,
    mc: &DVector<f64>,
) -> f64 {
    let n = prices.len();
    if conduct.scenario == Scenario::SelfPreferencing && conduct.sp[j] {
        return conduct.tau
            * (0..n)
                .filter(|&k| conduct.platforms[k] == Platform::Airbnb)
                .map(|k| prices[k] * quantities[k])
                .sum::<f64>();
    }
    // a seller earns on every product it lists
    (0..n)
        .filter(|&k| conduct.firms[k] == conduct.firms[j])
        .map(|k| {
            let cost = if conduct.sp[k] { 0.0 } else { mc[k] };
            (prices[k] - cost) * quantities[k]
        })
        .sum()
}

/// Largest objective gain from moving any single price by `±step`.
pub fn best_unilateral_gain(
    ctx: &DemandContext,
    delta_at_ctx: &MeanUtilities,
    eq: &EquilibriumResult,
    conduct: &ConductSpec,
    step: f64,
) -> f64 {
    let base_q = quantities_at(ctx, delta_at_ctx, &eq.prices);
    let mut worst = f64::NEG_INFINITY;
    for j in 0..eq.prices.len() {
        let base = player_objective(j, conduct, &eq.prices, &base_q, &eq.mc);
        for sign in [-1.0, 1.0] {
            let mut p = eq.prices.clone();
            p[j] += sign * step;
            if p[j] < 0.0 {
                continue;
            }
            let q = quantities_at(ctx, delta_at_ctx, &p);
            let gain = player_objective(j, conduct, &p, &q, &eq.mc) - base;
            worst = worst.max(gain);
        }
    }
    worst
}

/// Maximizes a unimodal function on `[lo, hi]` by golden-section search.
pub fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    while hi - lo > tol {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = f(a);
        }
    }
    0.5 * (lo + hi)
}

/// Root of an increasing-crossing function on `[lo, hi]` by bisection.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let mut f_lo = f(lo);
    assert!(f_lo * f(hi) <= 0.0, "bracket does not straddle a root");
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid * f_lo <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
            f_lo = f_mid;
        }
    }
    0.5 * (lo + hi)
}

/// Nash equilibrium of the three-player smart-pricing game computed by
/// iterated best response: the platform picks the smart-pricing price on a
/// grid of width `grid`, the other two sellers best-respond continuously.
///
/// Products are ordered (smart-pricing listing, other Airbnb host, hotel).
pub fn grid_nash_three_player(
    ctx: &DemandContext,
    delta: &MeanUtilities,
    mc: &DVector<f64>,
    tau: f64,
    grid: f64,
    upper: f64,
) -> DVector<f64> {
    let mut p = ctx.prices.clone();
    let commission = |p: &DVector<f64>| {
        let q = quantities_at(ctx, delta, p);
        tau * (p[0] * q[0] + p[1] * q[1])
    };
    let profit = |p: &DVector<f64>, j: usize| {
        let q = quantities_at(ctx, delta, p);
        (p[j] - mc[j]) * q[j]
    };
    for _ in 0..500 {
        let previous = p.clone();
        // platform: exhaustive grid
        let steps = (upper / grid).round() as usize;
        let mut best = (f64::NEG_INFINITY, p[0]);
        for k in 1..=steps {
            let mut trial = p.clone();
            trial[0] = k as f64 * grid;
            let value = commission(&trial);
            if value > best.0 {
                best = (value, trial[0]);
            }
        }
        p[0] = best.1;
        for j in 1..3 {
            let current = p.clone();
            p[j] = golden_max(
                |x| {
                    let mut trial = current.clone();
                    trial[j] = x;
                    profit(&trial, j)
                },
                mc[j].max(0.0),
                upper,
                1e-10,
            );
        }
        if (&p - &previous).amax() < 1e-9 {
            break;
        }
    }
    p
}

/// Random market with conduct labels and true marginal costs.
pub struct Market {
    pub ctx: DemandContext,
    pub delta: MeanUtilities,
    pub firms: Vec<String>,
    pub platforms: Vec<Platform>,
    pub sp: Vec<bool>,
    pub mc: DVector<f64>,
}

impl Market {
    pub fn conduct(&self, scenario: Scenario) -> ConductSpec {
        conductsim::supply::build_conduct(
            &self.firms,
            &self.platforms,
            &self.sp,
            scenario,
            conductsim::supply::SpGrouping::PerHost,
        )
        .unwrap()
    }
}

/// Small market whose price coefficients are negative for every draw.
pub fn random_market(rng: &mut ChaCha8Rng, n: usize, n_draws: usize) -> Market {
    let sigma = rng.random_range(-0.3..0.3);
    let rho = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.05..0.8) };
    let mut inst = random_instance(rng, n, sigma, rho, n_draws);
    inst.ctx.params.alpha = rng.random_range(-2.5..-1.2);
    let platforms: Vec<Platform> =
        (0..n).map(|_| if rng.random_bool(0.6) { Platform::Airbnb } else { Platform::Hotel }).collect();
    let firms: Vec<String> = (0..n).map(|_| format!("f{}", rng.random_range(0..n.div_ceil(2).max(1)))).collect();
    // a firm is either a hotel chain or an Airbnb host
    let platforms: Vec<Platform> = (0..n)
        .map(|j| {
            let first = firms.iter().position(|f| *f == firms[j]).unwrap();
            platforms[first]
        })
        .collect();
    let sp: Vec<bool> = (0..n).map(|j| platforms[j] == Platform::Airbnb && rng.random_bool(0.4)).collect();
    let mc = DVector::from_fn(n, |j, _| if sp[j] { 0.0 } else { rng.random_range(0.05..0.6) });
    Market {
        ctx: inst.ctx,
        delta: inst.delta,
        firms,
        platforms,
        sp,
        mc,
    }
}
