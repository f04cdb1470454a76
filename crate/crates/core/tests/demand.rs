mod common;

use common::*;
use conductsim::demand::{
    compute_shares, consumer_surplus, invert_shares, share_price_jacobian, DemandContext, DemandParams,
    InversionOptions, MeanUtilities, NestStructure, SurplusPolicy, TasteDraws,
};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn logit_and_nested_logit_reductions() {
    let mut rng = rng(11);
    for case in 0..100 {
        let n = rng.random_range(1..=10);
        let rho = if case % 2 == 0 { 0.0 } else { rng.random_range(0.05..0.95) };
        let inst = random_instance(&mut rng, n, 0.0, rho, 7);
        let got = inst.ctx.shares(&inst.delta).unwrap();
        let expected = if rho == 0.0 {
            logit_closed_form(inst.delta.0.as_slice())
        } else {
            nested_logit_closed_form(inst.delta.0.as_slice(), inst.ctx.nests.groups(), rho)
        };
        for j in 0..n {
            assert!((got[j] - expected[j]).abs() < 1e-12, "case {case}: {} vs {}", got[j], expected[j]);
        }
    }
}

#[test]
fn inversion_roundtrip_mixed_nested() {
    let mut rng = rng(5);
    let inst = random_instance(&mut rng, 5, 0.5, 0.7, 200);
    let shares = inst.ctx.shares(&inst.delta).unwrap();
    let out = invert_shares(
        &shares,
        &inst.ctx.params,
        &inst.ctx.nests,
        &inst.ctx.draws,
        &inst.ctx.prices,
        None,
        &InversionOptions::default(),
    )
    .unwrap();
    assert!((&out.delta.0 - &inst.delta.0).amax() < 1e-10);
    let back = inst.ctx.shares(&out.delta).unwrap();
    assert!((back - shares).amax() < 1e-12);
}

#[test]
fn jacobian_matches_finite_differences() {
    let mut rng = rng(23);
    for _ in 0..10 {
        let n = rng.random_range(1..=6);
        let sigma = rng.random_range(-1.0..1.0);
        let rho = rng.random_range(0.0..0.9);
        let inst = random_instance(&mut rng, n, sigma, rho, 100);
        let analytic = inst.ctx.jacobian(&inst.delta).unwrap();
        let numeric = finite_difference_jacobian(&inst.ctx, &inst.delta, 1e-6);
        let scale = analytic.amax();
        assert!((analytic - numeric).amax() / scale < 1e-6);
    }
}

#[test]
fn nesting_strengthens_within_group_substitution() {
    // nest-mates are symmetric so within-nest probabilities stay at 1/2
    let delta = MeanUtilities::from_slice(&[0.5, 0.5, 0.2, 0.2]);
    let ratio = |rho: f64| {
        let ctx = DemandContext {
            prices: DVector::from_vec(vec![0.3, 0.3, 0.35, 0.35]),
            params: DemandParams::new(-1.0, 0.3, rho).unwrap(),
            nests: NestStructure::new(vec![1, 1, 2, 2]).unwrap(),
            draws: TasteDraws::new(200, 4),
            market_size: 10.0,
        };
        let jac = ctx.jacobian(&delta).unwrap();
        // effect of product 0's price on a nest-mate vs. on another nest
        jac[(1, 0)] / jac[(2, 0)]
    };
    let values: Vec<f64> = [0.0, 0.3, 0.6, 0.9].iter().map(|&r| ratio(r)).collect();
    for pair in values.windows(2) {
        assert!(pair[1] > pair[0], "{values:?}");
    }
}

#[test]
fn surplus_matches_gumbel_simulation() {
    let delta = [1.0, 0.0];
    let cs = consumer_surplus(
        &MeanUtilities::from_slice(&delta),
        &DVector::from_element(2, 0.5),
        &DemandParams::new(-1.0, 0.0, 0.0).unwrap(),
        &NestStructure::singletons(2),
        &TasteDraws::new(10, 1),
        SurplusPolicy::default(),
    )
    .unwrap();
    assert!((cs.per_capita - (1.0 + 1f64.exp() + 1.0).ln()).abs() < 1e-14);
    let (simulated, se) = gumbel_expected_max(&delta, 1_000_000, 99);
    assert!((cs.per_capita - simulated).abs() < 3.0 * se, "{} vs {simulated} (se {se})", cs.per_capita);
}

#[test]
fn nested_surplus_is_log_sum_over_groups() {
    // two nests, sigma = 0: CS = log(1 + sum_g (sum_j e^{d/(1-rho)})^{1-rho}) / -alpha
    let delta = [0.3_f64, -0.2, 0.8];
    let groups = [1, 1, 2];
    let rho = 0.4_f64;
    let alpha = -1.7;
    let mut sums = [0.0_f64; 3];
    for (d, &g) in delta.iter().zip(&groups) {
        sums[g] += (d / (1.0 - rho)).exp();
    }
    let expected = (1.0 + sums[1].powf(1.0 - rho) + sums[2].powf(1.0 - rho)).ln() / -alpha;
    let cs = consumer_surplus(
        &MeanUtilities::from_slice(&delta),
        &DVector::from_element(3, 0.5),
        &DemandParams::new(alpha, 0.0, rho).unwrap(),
        &NestStructure::new(groups.to_vec()).unwrap(),
        &TasteDraws::new(3, 1),
        SurplusPolicy::default(),
    )
    .unwrap();
    assert!((cs.per_capita - expected).abs() < 1e-12);
}

#[test]
fn jacobian_agrees_with_direct_derivative() {
    let ctx = DemandContext {
        prices: DVector::from_vec(vec![0.2, 0.5]),
        params: DemandParams::new(-1.2, 0.0, 0.0).unwrap(),
        nests: NestStructure::singletons(2),
        draws: TasteDraws::new(3, 1),
        market_size: 1.0,
    };
    let delta = MeanUtilities::from_slice(&[0.1, 0.2]);
    let jac = share_price_jacobian(&delta, &ctx.prices, &ctx.params, &ctx.nests, &ctx.draws, 1.0).unwrap();
    let s = compute_shares(&delta, &ctx.prices, &ctx.params, &ctx.nests, &ctx.draws).unwrap();
    assert!((jac[(0, 0)] - (-1.2) * s[0] * (1.0 - s[0])).abs() < 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shares_and_outside_good_sum_to_one(
        seed in any::<u64>(),
        n in 1usize..8,
        sigma in -1.5f64..1.5,
        rho in 0.0f64..0.95,
    ) {
        let mut rng = rng(seed);
        let inst = random_instance(&mut rng, n, sigma, rho, 50);
        let s = inst.ctx.shares(&inst.delta).unwrap();
        let inside = s.sum();
        let outside = 1.0 - inside;
        prop_assert!(s.iter().all(|&x| x > 0.0 && x < 1.0));
        prop_assert!(inside < 1.0);
        prop_assert!((inside + outside - 1.0).abs() < 1e-14);
    }

    #[test]
    fn raising_own_utility_raises_own_share(
        seed in any::<u64>(),
        n in 2usize..7,
        sigma in -1.0f64..1.0,
        rho in 0.0f64..0.9,
        bump in 0.01f64..1.0,
    ) {
        let mut rng = rng(seed);
        let inst = random_instance(&mut rng, n, sigma, rho, 40);
        let j = (seed % n as u64) as usize;
        let before = inst.ctx.shares(&inst.delta).unwrap();
        let mut raised = inst.delta.clone();
        raised.0[j] += bump;
        let after = inst.ctx.shares(&raised).unwrap();
        prop_assert!(after[j] > before[j]);
        for k in (0..n).filter(|&k| k != j) {
            prop_assert!(after[k] <= before[k] + 1e-16);
        }
    }

    #[test]
    fn inversion_inverts_forward_map(
        seed in any::<u64>(),
        n in 1usize..6,
        sigma in prop_oneof![Just(0.0), Just(0.5)],
        rho in prop_oneof![Just(0.0), Just(0.3), Just(0.7), Just(0.9)],
    ) {
        let mut rng = rng(seed);
        let inst = random_instance(&mut rng, n, sigma, rho, 50);
        let shares = inst.ctx.shares(&inst.delta).unwrap();
        let out = invert_shares(&shares, &inst.ctx.params, &inst.ctx.nests, &inst.ctx.draws,
            &inst.ctx.prices, None, &InversionOptions::default()).unwrap();
        prop_assert!((out.delta.0 - inst.delta.0).amax() < 1e-10);
    }
}
