//! End-to-end acceptance checks. Runs without the libtest harness so every
//! check prints exactly one PASS or FAIL line.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use common::*;
use conductsim::cli::PipelineConfig;
use conductsim::dataio::{
    apply_screens, build_markets, classify_sp, synthesize, CompetitionMode, ListingRecord, SynthConfig,
    DEFAULT_CLUSTERS, SHARE_THRESHOLD, SP_BOTTOM_CLUSTERS,
};
use conductsim::demand::{
    compute_shares, consumer_surplus, invert_shares, market_size_from_rooms, DemandContext, DemandParams,
    InversionOptions, MeanUtilities, NestStructure, SurplusPolicy, TasteDraws, MARKET_SIZE_PER_ROOM,
};
use conductsim::estimation::{estimate, EstimationConfig, GmmProblem, ModelSpec, BOOTSTRAP_DRAWS};
use conductsim::supply::{
    build_conduct, recover_marginal_costs, solve_equilibrium, EquilibriumOptions, Platform, Scenario, SpGrouping,
    COMMISSION_RATE,
};
use conductsim::welfare::market_welfare;
use nalgebra::DVector;
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, format!("took {elapsed:.2?}, limit {limit:?}"))
}

fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn closed_forms() -> Outcome {
    let t = Instant::now();
    let mut rng = rng(101);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = rng.random_range(1..=10);
        let rho = if case % 2 == 0 { 0.0 } else { rng.random_range(0.05..0.95) };
        let inst = random_instance(&mut rng, n, 0.0, rho, 20);
        let ctx = &inst.ctx;
        let got = compute_shares(&inst.delta, &ctx.prices, &ctx.params, &ctx.nests, &ctx.draws).map_err(|e| e.to_string())?;
        let want = if rho == 0.0 {
            logit_closed_form(inst.delta.0.as_slice())
        } else {
            nested_logit_closed_form(inst.delta.0.as_slice(), ctx.nests.groups(), rho)
        };
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
    }
    check(worst < 1e-12, format!("max share error {worst:e}"))?;
    within(t.elapsed(), Duration::from_secs(1))?;
    Ok(format!("max error {worst:.1e} in {:.2?}", t.elapsed()))
}

fn inversion_roundtrip() -> Outcome {
    let t = Instant::now();
    let mut rng = rng(202);
    let mut worst = 0.0f64;
    let grid: Vec<(f64, f64)> = [0.0, 0.3, 0.7, 0.9].iter().flat_map(|&r| [(0.0, r), (0.5, r)]).collect();
    for case in 0..100 {
        let (sigma, rho) = grid[case % grid.len()];
        let n = rng.random_range(1..=10);
        let inst = random_instance(&mut rng, n, sigma, rho, 100);
        let ctx = &inst.ctx;
        let shares = ctx.shares(&inst.delta).map_err(|e| e.to_string())?;
        let back = invert_shares(&shares, &ctx.params, &ctx.nests, &ctx.draws, &ctx.prices, None, &InversionOptions::default())
            .map_err(|e| format!("case {case}: {e}"))?;
        worst = worst.max((&back.delta.0 - &inst.delta.0).amax());
    }
    check(worst < 1e-10, format!("max delta error {worst:e}"))?;
    within(t.elapsed(), Duration::from_secs(10))?;
    Ok(format!("max error {worst:.1e} in {:.2?}", t.elapsed()))
}

fn jacobian_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = rng(303);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..=8);
        let sigma = rng.random_range(-1.0..1.0);
        let rho = rng.random_range(0.0..0.9);
        let inst = random_instance(&mut rng, n, sigma, rho, 100);
        let analytic = inst.ctx.jacobian(&inst.delta).map_err(|e| e.to_string())?;
        let numeric = finite_difference_jacobian(&inst.ctx, &inst.delta, 1e-6);
        worst = worst.max((&analytic - numeric).amax() / analytic.amax());
    }
    check(worst < 1e-6, format!("max relative error {worst:e}"))?;
    within(t.elapsed(), Duration::from_secs(30))?;
    Ok(format!("max relative error {worst:.1e} in {:.2?}", t.elapsed()))
}

fn cost_roundtrip() -> Outcome {
    let t = Instant::now();
    let mut rng = rng(404);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let n = rng.random_range(1..=6);
        let market = random_market(&mut rng, n, 60);
        let conduct = market.conduct(Scenario::Baseline);
        let eq = solve_equilibrium(&market.mc, &conduct, &market.ctx, &market.delta, None, &EquilibriumOptions::default())
            .map_err(|e| format!("case {case}: {e}"))?;
        let at_eq = DemandContext {
            prices: eq.prices.clone(),
            ..market.ctx.clone()
        };
        let jac = at_eq.jacobian(&MeanUtilities(eq.delta.clone())).map_err(|e| e.to_string())?;
        let back = recover_marginal_costs(&eq.prices, &eq.quantities, &jac, &conduct).map_err(|e| e.to_string())?;
        worst = worst.max((&back.mc - &market.mc).amax());
    }
    check(worst < 1e-8, format!("max cost error {worst:e}"))?;
    within(t.elapsed(), Duration::from_secs(60))?;
    Ok(format!("max error {worst:.1e} in {:.2?}", t.elapsed()))
}

fn three_product_market() -> (DemandContext, MeanUtilities, DVector<f64>) {
    let ctx = DemandContext {
        prices: DVector::from_vec(vec![0.6, 0.8, 1.0]),
        params: DemandParams::new(-0.928, -0.15, 0.436).unwrap(),
        nests: NestStructure::new(vec![1, 1, 2]).unwrap(),
        draws: TasteDraws::new(200, 17),
        market_size: 30.0,
    };
    let delta = MeanUtilities::from_slice(&[0.2, 0.4, 0.1]);
    (ctx, delta, DVector::from_vec(vec![0.0, 0.3, 0.35]))
}

fn self_preferencing_oracle() -> Outcome {
    let t = Instant::now();
    let (ctx, delta, mc) = three_product_market();
    let conduct = build_conduct(
        &labels(&["sp-host", "host", "hotel"]),
        &[Platform::Airbnb, Platform::Airbnb, Platform::Hotel],
        &[true, false, false],
        Scenario::SelfPreferencing,
        SpGrouping::PerHost,
    )
    .map_err(|e| e.to_string())?;
    let eq = solve_equilibrium(&mc, &conduct, &ctx, &delta, None, &EquilibriumOptions::default()).map_err(|e| e.to_string())?;
    let grid = 1e-3;
    let oracle = grid_nash_three_player(&ctx, &delta, &mc, COMMISSION_RATE, grid, 6.0);
    let gap = (eq.prices[0] - oracle[0]).abs();
    check(gap <= grid + 1e-9, format!("solver {} vs grid {}", eq.prices[0], oracle[0]))?;
    within(t.elapsed(), Duration::from_secs(60))?;
    Ok(format!("smart-pricing price {:.4} vs grid {:.3} in {:.2?}", eq.prices[0], oracle[0], t.elapsed()))
}

fn deviation_probes() -> Outcome {
    let mut rng = rng(606);
    let mut worst = f64::NEG_INFINITY;
    let mut solved = 0;
    for _ in 0..25 {
        let n = rng.random_range(2..=6);
        let market = random_market(&mut rng, n, 60);
        for scenario in [Scenario::Baseline, Scenario::SelfPreferencing] {
            let conduct = market.conduct(scenario);
            let eq = solve_equilibrium(&market.mc, &conduct, &market.ctx, &market.delta, None, &EquilibriumOptions::default())
                .map_err(|e| e.to_string())?;
            worst = worst.max(best_unilateral_gain(&market.ctx, &market.delta, &eq, &conduct, 1e-4));
            solved += 1;
        }
    }
    let (ctx, delta, mc) = three_product_market();
    let (firms, platforms, sp) = (
        labels(&["sp-host", "host", "hotel"]),
        [Platform::Airbnb, Platform::Airbnb, Platform::Hotel],
        [true, false, false],
    );
    for scenario in [Scenario::Baseline, Scenario::SelfPreferencing] {
        let conduct = build_conduct(&firms, &platforms, &sp, scenario, SpGrouping::PerHost).map_err(|e| e.to_string())?;
        let eq = solve_equilibrium(&mc, &conduct, &ctx, &delta, None, &EquilibriumOptions::default()).map_err(|e| e.to_string())?;
        worst = worst.max(best_unilateral_gain(&ctx, &delta, &eq, &conduct, 1e-4));
        solved += 1;
    }
    check(worst <= 1e-10, format!("a deviation gains {worst:e}"))?;
    Ok(format!("{solved} equilibria, best deviation gain {worst:.1e}"))
}

fn synthetic_recovery() -> Outcome {
    let t = Instant::now();
    let draws = 200;
    let synth = SynthConfig {
        n_markets: 200,
        n_draws: draws,
        ..SynthConfig::default()
    };
    check(
        (synth.alpha, synth.sigma, synth.rho) == (-0.928, -0.559, 0.436),
        "synthetic truth differs from the demand estimates",
    )?;

    let noiseless = synthesize(&SynthConfig { xi_sd: 0.0, ..synth.clone() }).map_err(|e| e.to_string())?;
    let problem = GmmProblem::new(&noiseless.dataset, &ModelSpec::default(), draws, synth.seed, InversionOptions::default())
        .map_err(|e| e.to_string())?;
    let weighting = problem.first_step_weighting().map_err(|e| e.to_string())?;
    let at_truth = problem.objective([synth.sigma, synth.rho], &weighting).map_err(|e| e.to_string())?;
    check(at_truth < 1e-16, format!("noiseless objective at truth {at_truth:e}"))?;

    let data = synthesize(&synth).map_err(|e| e.to_string())?;
    let config = EstimationConfig {
        n_draws: draws,
        seed: synth.seed,
        ..EstimationConfig::default()
    };
    let result = estimate(&data.dataset, &config).map_err(|e| e.to_string())?;
    let intervals = result.bootstrap(BOOTSTRAP_DRAWS, synth.seed).map_err(|e| e.to_string())?.intervals();
    let mut summary = Vec::new();
    for (name, truth) in [("price", synth.alpha), ("sigma", synth.sigma), ("rho", synth.rho)] {
        let iv = intervals.iter().find(|i| i.name == name).ok_or(format!("no {name} estimate"))?;
        let z = (iv.estimate - truth) / iv.std_error;
        summary.push(format!("{name} {:.3} (se {:.3})", iv.estimate, iv.std_error));
        check(z.abs() <= 2.0, format!("{name}: estimate {} truth {truth} bootstrap se {}", iv.estimate, iv.std_error))?;
    }
    within(t.elapsed(), Duration::from_secs(600))?;
    Ok(format!("{}, noiseless objective {at_truth:.1e}, {:.1?}", summary.join(", "), t.elapsed()))
}

fn surplus_oracle() -> Outcome {
    let mut rng = rng(808);
    let n = 4;
    let delta: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.5)).collect();
    let alpha = -1.3;
    let params = DemandParams::new(alpha, 0.0, 0.0).map_err(|e| e.to_string())?;
    let cs = consumer_surplus(
        &MeanUtilities::from_slice(&delta),
        &DVector::from_element(n, 0.5),
        &params,
        &NestStructure::singletons(n),
        &TasteDraws::new(10, 1),
        SurplusPolicy::Error,
    )
    .map_err(|e| e.to_string())?;
    let (utils, se) = gumbel_expected_max(&delta, 1_000_000, 9);
    let (sim, sim_se) = (utils / -alpha, se / -alpha);
    let z = (cs.per_capita - sim) / sim_se;
    check(z.abs() <= 3.0, format!("log-sum {} vs simulated {sim} (se {sim_se})", cs.per_capita))?;
    Ok(format!("log-sum {:.5} vs simulated {sim:.5}, z = {z:.2}", cs.per_capita))
}

fn record(day: u32, id: &str, platform: Platform, price: f64, vacancies: f64, rooms: f64) -> ListingRecord {
    ListingRecord {
        date: NaiveDate::from_ymd_opt(2023, 7, day).unwrap(),
        ward: "w".into(),
        listing_id: id.into(),
        host_id: id.into(),
        platform,
        price,
        n_reviews: 10.0,
        ratings: [4.5; 4],
        beds: 1.0,
        vacancies,
        rooms,
    }
}

fn fixed_constants() -> Outcome {
    check(COMMISSION_RATE == 0.03, format!("commission rate {COMMISSION_RATE}"))?;
    check(
        MARKET_SIZE_PER_ROOM == 2.0 && market_size_from_rooms(350.0) == 700.0,
        "market size is not twice the rooms",
    )?;
    let pipeline = PipelineConfig::default();
    check(DEFAULT_CLUSTERS == 5 && pipeline.clusters == 5, "cluster count is not 5")?;
    check(
        BOOTSTRAP_DRAWS == 1000 && pipeline.bootstrap_draws == 1000 && EstimationConfig::default().bootstrap_draws == 1000,
        "bootstrap draws are not 1000",
    )?;

    // smart pricing: bottom two of five clusters and a price change between days
    check(SP_BOTTOM_CLUSTERS == 2, "smart pricing does not use the bottom two clusters")?;
    let mut records = Vec::new();
    let mut cluster_labels = Vec::new();
    for (id, platform, label, moves) in [
        ("c4-moves", Platform::Airbnb, 4, true),
        ("c5-moves", Platform::Airbnb, 5, true),
        ("c5-flat", Platform::Airbnb, 5, false),
        ("c3-moves", Platform::Airbnb, 3, true),
        ("hotel-c5-moves", Platform::Hotel, 5, true),
    ] {
        for day in [1, 2] {
            let price = if moves && day == 2 { 0.21 } else { 0.2 };
            records.push(record(day, id, platform, price, 5.0, 10.0));
            cluster_labels.push(label);
        }
    }
    let flags = classify_sp(&records, &cluster_labels, 5);
    let flagged: Vec<&str> = records.iter().zip(&flags).filter(|(_, f)| **f).map(|(r, _)| r.listing_id.as_str()).collect();
    check(
        flagged == ["c4-moves", "c4-moves", "c5-moves", "c5-moves"],
        format!("smart-pricing flags {flagged:?}"),
    )?;

    // share screen: 0.4% dropped, exactly 0.5% kept
    check(SHARE_THRESHOLD == 0.005, format!("share threshold {SHARE_THRESHOLD}"))?;
    let screen = vec![
        record(1, "low", Platform::Airbnb, 0.2, 8.0, 300.0),
        record(1, "edge", Platform::Airbnb, 0.2, 10.0, 300.0),
        record(1, "big", Platform::Hotel, 0.3, 200.0, 400.0),
    ];
    let data = build_markets(&screen, &[5; 3], &[false; 3], CompetitionMode::WithHotels).map_err(|e| e.to_string())?;
    let kept = apply_screens(&data).markets[0].products.clone();
    check(kept == ["edge", "big"], format!("screen kept {kept:?}"))?;
    Ok("commission 0.03, market size 2x rooms, 5 clusters, bottom-two smart pricing, strict 0.5% screen, 1000 draws".into())
}

fn direction_check() -> Outcome {
    let ctx = DemandContext {
        prices: DVector::from_vec(vec![0.6, 0.8, 1.0, 0.5]),
        params: DemandParams::new(-0.928, -0.559, 0.436).map_err(|e| e.to_string())?,
        nests: NestStructure::new(vec![1, 1, 2, 1]).map_err(|e| e.to_string())?,
        draws: TasteDraws::new(200, 5),
        market_size: 10.0,
    };
    // inside goods take most of the market
    let delta = MeanUtilities::from_slice(&[2.0, 2.2, 1.8, 2.1]);
    let mc = DVector::from_vec(vec![0.0, 0.3, 0.35, 0.0]);
    let firms = labels(&["sp-a", "host", "hotel", "sp-b"]);
    let platforms = [Platform::Airbnb, Platform::Airbnb, Platform::Hotel, Platform::Airbnb];
    let sp = [true, false, false, true];
    let mut outcomes = Vec::new();
    for scenario in [Scenario::Baseline, Scenario::SelfPreferencing] {
        let conduct = build_conduct(&firms, &platforms, &sp, scenario, SpGrouping::PerHost).map_err(|e| e.to_string())?;
        let eq = solve_equilibrium(&mc, &conduct, &ctx, &delta, None, &EquilibriumOptions::default())
            .map_err(|e| format!("{scenario}: {e}"))?;
        let gain = best_unilateral_gain(&ctx, &delta, &eq, &conduct, 1e-4);
        check(gain <= 1e-10, format!("{scenario}: not a local optimum, deviation gains {gain:e}"))?;
        outcomes.push(market_welfare(&eq, &ctx, &conduct).map_err(|e| e.to_string())?);
    }
    let (base, sp) = (&outcomes[0], &outcomes[1]);
    check(sp.commission >= base.commission, format!("commission {} -> {}", base.commission, sp.commission))?;
    check(sp.cs < base.cs, format!("consumer surplus {} -> {}", base.cs, sp.cs))?;
    Ok(format!(
        "commission {:.4} -> {:.4}, consumer surplus {:.3} -> {:.3}",
        base.commission, sp.commission, base.cs, sp.cs
    ))
}

const PIPELINE_CONFIG: &str = r#"
seed = 5
n_draws = 60
bootstrap_draws = 200

[synth]
n_markets = 20
sigma = -0.15
sp_adoption = 0.7
pricing = "forward"
"#;

fn tree(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("config.toml");
    fs::write(&config, PIPELINE_CONFIG).map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for name in ["first", "second"] {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_conductsim"))
            .arg("--config")
            .arg(&config)
            .arg("--output")
            .arg(&out)
            .arg("run")
            .env("CONDUCTSIM_LOG", "error")
            .status()
            .map_err(|e| e.to_string())?;
        check(status.success(), format!("{name} run exited with {status}"))?;
        runs.push(out);
    }
    let files = tree(&runs[0]);
    check(files == tree(&runs[1]), "the runs wrote different files")?;
    check(files.iter().any(|f| f.starts_with("reports")), "no reports written")?;
    for f in &files {
        let a = fs::read(runs[0].join(f)).map_err(|e| e.to_string())?;
        let b = fs::read(runs[1].join(f)).map_err(|e| e.to_string())?;
        check(a == b, format!("{} differs", f.display()))?;
    }
    Ok(format!("{} files byte-identical", files.len()))
}

fn main() {
    let checks: [(&str, fn() -> Outcome); 11] = [
        ("logit and nested logit closed forms", closed_forms),
        ("share inversion roundtrip", inversion_roundtrip),
        ("demand Jacobian vs finite differences", jacobian_oracle),
        ("marginal cost and price roundtrip", cost_roundtrip),
        ("smart-pricing price vs grid Nash", self_preferencing_oracle),
        ("unilateral deviation probes", deviation_probes),
        ("synthetic parameter recovery", synthetic_recovery),
        ("consumer surplus vs Gumbel simulation", surplus_oracle),
        ("fixed constants", fixed_constants),
        ("self-preferencing direction", direction_check),
        ("pipeline determinism", determinism),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in checks.iter().enumerate() {
        let id = format!("{:02}", i + 1);
        if !only.is_empty() && !only.iter().any(|o| *o == id || name.contains(o.as_str())) {
            continue;
        }
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {id} {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id} {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
