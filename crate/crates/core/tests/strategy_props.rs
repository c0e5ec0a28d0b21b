use proptest::prelude::*;

use roleplay_core::scenario::{BorrowBuySetup, BorrowDonateSetup, ScenarioConfig};
use roleplay_core::strategies::{
    self, bb_multi_run, bb_single_run, bd_enhanced_run, bd_primitive_run, BdParams, StrategyKind, StrategyParams,
    DEFAULT_MAX_ROUNDS,
};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Single-round profit from pool arithmetic alone: buy with `x` stable from
/// a symmetric pool of depth `l0`, value the purchase at the new spot
/// price, borrow as much as the market allows, repay the flash loan.
fn bb_oracle(x: f64, setup: &BorrowBuySetup) -> f64 {
    let l0 = setup.l0;
    let bought = l0 - l0 * l0 / (l0 + x);
    let spot = (l0 + x) / (l0 * l0 / (l0 + x));
    let borrow = (setup.cr_m * bought * spot).min(setup.init_s);
    borrow - x / (1.0 - setup.flash_fee)
}

/// Borrow-and-donate outcome from the choreography, tracked by hand.
fn bd_oracle(s: &BorrowDonateSetup, iter: u32, mint: f64, enhanced: bool) -> Option<f64> {
    let n = f64::from(iter);
    let debt_ib = n * (s.borrowable_ib + mint);
    let kept = mint + (n - 1.0) * (s.borrowable_ib + mint);
    let float = s.supply_ib - s.borrowable_ib;
    let (collateral, ratio) = if enhanced {
        let c = (debt_ib + s.borrowable_s) / s.cr_s;
        (c, c * (1.0 - s.liq_incentive) / kept)
    } else {
        let c = debt_ib / s.cr_s;
        (c, (s.borrowable_s + c) / (s.cr_ib * kept))
    };
    if float <= 0.0 || kept <= 0.0 || ratio < 1.0 {
        return None;
    }
    let donated = (ratio - 1.0) * float;
    let flashed = mint + collateral + donated;
    let proceeds = s.borrowable_s + collateral + s.borrowable_ib + mint;
    Some(proceeds - flashed / (1.0 - s.flash_fee))
}

fn bb_setup() -> impl Strategy<Value = BorrowBuySetup> {
    (
        1e3f64..1e6,
        prop_oneof![Just(0.0), 1e2f64..1e5],
        0.5f64..0.98,
        1e2f64..1e5,
        prop_oneof![Just(0.0), 0.0f64..0.0009],
    )
        .prop_map(|(init_s, init_m, cr, l0, flash_fee)| BorrowBuySetup {
            init_s,
            init_m,
            cr_m: cr,
            cr_s: cr,
            l0,
            flash_fee,
        })
}

fn bd_setup() -> impl Strategy<Value = BorrowDonateSetup> {
    (
        1e3f64..1e7,
        0.05f64..0.9,
        1e3f64..1e7,
        0.5f64..0.95,
        0.0f64..0.15,
        prop_oneof![Just(0.0), 0.0f64..0.0009],
    )
        .prop_map(|(supply, frac, b_s, cr, liq, fee)| BorrowDonateSetup {
            supply_ib: supply,
            borrowable_ib: supply * frac,
            borrowable_s: b_s,
            cr_s: cr,
            cr_ib: cr,
            liq_incentive: liq,
            flash_fee: fee,
            flash_liquidity: 1e13,
        })
}

fn bd_params(s: &BorrowDonateSetup, iter: u32, mint: f64, enhanced: bool) -> BdParams {
    let n = f64::from(iter);
    let debt_ib = n * (s.borrowable_ib + mint);
    let kept = mint + (n - 1.0) * (s.borrowable_ib + mint);
    let float = s.supply_ib - s.borrowable_ib;
    let (collateral_b, ratio) = if enhanced {
        let c = (debt_ib + s.borrowable_s) / s.cr_s;
        (c, c * (1.0 - s.liq_incentive) / kept)
    } else {
        let c = debt_ib / s.cr_s;
        (c, (s.borrowable_s + c) / (s.cr_ib * kept))
    };
    BdParams {
        init_mint: mint,
        collateral_b,
        donate: (ratio - 1.0).max(0.0) * float,
        iter,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn single_round_matches_pool_arithmetic(setup in bb_setup(), frac in 0.0f64..1.0) {
        let world = setup.config().build_world().unwrap();
        let x = setup.init_s * frac;
        let ex = bb_single_run(&world, x).unwrap();
        let r = &ex.report;
        prop_assert!(rel(r.simulated_profit, bb_oracle(x, &setup)) <= 1e-9,
            "sim {} vs oracle {}", r.simulated_profit, bb_oracle(x, &setup));
        prop_assert!(ex.world.check_conservation(1e-12).is_ok());
        // the loan is repaid exactly when the borrow covers it
        prop_assert_eq!(r.flags.flash_repaid, bb_oracle(x, &setup) >= 0.0);
    }

    #[test]
    fn multi_round_respects_bound_and_identity(setup in bb_setup()) {
        let world = setup.config().build_world().unwrap();
        let ex = bb_multi_run(&world, DEFAULT_MAX_ROUNDS).unwrap();
        let r = &ex.report;
        prop_assert_eq!(r.flags.residual_within_bound, Some(true), "{:?}", r.metrics);
        let cf = r.closed_form_profit.unwrap();
        prop_assert!(rel(r.simulated_profit, cf) <= 1e-6, "sim {} vs identity {}", r.simulated_profit, cf);
        prop_assert!(ex.world.check_conservation(1e-12).is_ok());
    }

    #[test]
    fn borrow_donate_matches_hand_tracked_flow(
        setup in bd_setup(),
        iter in 1u32..=20,
        frac in 0.0f64..1.0,
        enhanced in any::<bool>(),
    ) {
        let mint = setup.supply_ib * frac;
        let Some(expected) = bd_oracle(&setup, iter, mint, enhanced) else {
            return Ok(());
        };
        let world = setup.config().build_world().unwrap();
        let p = bd_params(&setup, iter, mint, enhanced);
        let ex = if enhanced { bd_enhanced_run(&world, &p) } else { bd_primitive_run(&world, &p) }.unwrap();
        // a loss means the proceeds cannot cover the flashloans
        if expected < -1e-9 * expected.abs().max(1.0) {
            prop_assert!(!ex.report.feasible);
            return Ok(());
        }
        prop_assert!(ex.report.feasible, "{:?}", ex.report.failure);
        prop_assert!(rel(ex.report.simulated_profit, expected) <= 1e-6,
            "sim {} vs oracle {}", ex.report.simulated_profit, expected);
        prop_assert!(ex.world.check_conservation(1e-12).is_ok());
    }

    #[test]
    fn flash_fee_never_helps_borrow_buy(setup in bb_setup(), frac in 0.01f64..1.0, extra in 1e-5f64..0.01) {
        let cheap = BorrowBuySetup { flash_fee: 0.0, ..setup };
        let dear = BorrowBuySetup { flash_fee: extra, ..setup };
        let x = setup.init_s * frac;
        let a = bb_single_run(&cheap.config().build_world().unwrap(), x).unwrap().report.simulated_profit;
        let b = bb_single_run(&dear.config().build_world().unwrap(), x).unwrap().report.simulated_profit;
        prop_assert!(b < a);
        let a = bb_multi_run(&cheap.config().build_world().unwrap(), DEFAULT_MAX_ROUNDS).unwrap().report.simulated_profit;
        let b = bb_multi_run(&dear.config().build_world().unwrap(), DEFAULT_MAX_ROUNDS).unwrap().report.simulated_profit;
        prop_assert!(b <= a + 1e-9 * a.abs().max(1.0), "fee {} raised multi-round profit {} -> {}", extra, a, b);
    }

    #[test]
    fn more_market_liquidity_never_hurts_single_round(setup in bb_setup(), frac in 0.0f64..1.0, grow in 1.0f64..3.0) {
        let x = setup.init_s * frac;
        let small = bb_single_run(&setup.config().build_world().unwrap(), x).unwrap().report.simulated_profit;
        let big_setup = BorrowBuySetup { init_s: setup.init_s * grow, ..setup };
        let big = bb_single_run(&big_setup.config().build_world().unwrap(), x).unwrap().report.simulated_profit;
        prop_assert!(big >= small - 1e-9 * small.abs().max(1.0));
    }

    #[test]
    fn liquidation_incentive_shrinks_the_enhanced_donation(
        setup in bd_setup(),
        iter in 1u32..=20,
        frac in 0.0f64..1.0,
        bump in 0.001f64..0.05,
    ) {
        let mint = setup.supply_ib * frac;
        let higher = BorrowDonateSetup { liq_incentive: setup.liq_incentive + bump, ..setup };
        let (Some(lo), Some(hi)) = (bd_oracle(&setup, iter, mint, true), bd_oracle(&higher, iter, mint, true)) else {
            return Ok(());
        };
        let run = |s: &BorrowDonateSetup| {
            let world = s.config().build_world().unwrap();
            bd_enhanced_run(&world, &bd_params(s, iter, mint, true)).unwrap().report.simulated_profit
        };
        // the liquidator's bonus is the attacker's own, so less has to be donated
        prop_assert!(hi >= lo);
        prop_assert!(run(&higher) >= run(&setup) - 1e-9 * lo.abs().max(1.0));
    }
}

#[test]
fn desk_values() {
    // derived by hand from the desk parameters and frozen here
    let desk = BorrowBuySetup::desk();
    let world = desk.config().build_world().unwrap();
    let x_star = 500.0 * ((1.0f64 + 4.0 * 10_000.0 / 900.0).sqrt() - 1.0);
    let r = bb_single_run(&world, x_star).unwrap().report;
    assert!((r.simulated_profit - 7129.375264).abs() < 1e-6);
    assert!((x_star - 2870.624736).abs() < 1e-6);

    let bd = BorrowDonateSetup::desk();
    let world = bd.config().build_world().unwrap();
    let p = bd_primitive_run(&world, &bd_params(&bd, 5, 100.0, false))
        .unwrap()
        .report;
    let e = bd_enhanced_run(&world, &bd_params(&bd, 5, 100.0, true)).unwrap().report;
    assert!(
        (p.simulated_profit - 3530.864198).abs() < 1e-6,
        "{}",
        p.simulated_profit
    );
    assert!(
        (e.simulated_profit - 3857.142857).abs() < 1e-6,
        "{}",
        e.simulated_profit
    );
}

#[test]
fn dispatch_runs_every_preset_strategy_pair() {
    for name in ["bb_desk", "bd_desk", "agora_like", "lodestar_like"] {
        let config = ScenarioConfig::preset(name).unwrap();
        let world = config.build_world().unwrap();
        for kind in StrategyKind::ALL {
            let keys = kind.param_keys();
            let params = StrategyParams(
                config
                    .defaults
                    .iter()
                    .filter(|(k, _)| keys.contains(&k.as_str()))
                    .map(|(k, v)| (k.clone(), *v))
                    .collect(),
            );
            match (config.supports(kind), strategies::run(&world, kind, &params)) {
                (Ok(()), Ok(ex)) => assert!(ex.report.feasible, "{name}/{kind:?}: {:?}", ex.report.failure),
                (Ok(()), Err(e)) => panic!("{name}/{kind:?}: {e}"),
                (Err(_), Ok(_)) => panic!("{name}/{kind:?} ran without the components it needs"),
                (Err(_), Err(_)) => {}
            }
        }
    }
}
