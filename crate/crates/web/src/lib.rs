//! Browser bindings for the attack simulator. Each exported function takes
//! plain numbers and returns a JSON string for the page to plot.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use roleplay_core::scenario::{BorrowBuySetup, BorrowDonateSetup};
use roleplay_core::strategies::{
    bb_multi_formula, bb_multi_run, bb_single_formula, bb_single_run, bd_enhanced_run, bd_formula, bd_inputs,
    bd_primitive_run, BdParams, Execution,
};
use roleplay_core::World;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub out_s: f64,
    pub profit: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfitCurve {
    pub points: Vec<CurvePoint>,
    /// Closed-form optimum, absent when no purchase is profitable.
    pub optimum_out_s: Option<f64>,
    pub optimum_profit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundPoint {
    pub rounds: u32,
    pub profit: f64,
    pub residual_stable: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub points: Vec<RoundPoint>,
    pub residual_bound: f64,
    pub single_round_profit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DonateOutcome {
    pub feasible: bool,
    pub profit: f64,
    pub closed_form: f64,
    pub epsilon: f64,
    pub donate: f64,
    pub collateral_b: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DonateComparison {
    pub primitive: DonateOutcome,
    pub enhanced: DonateOutcome,
}

fn world_for_bb(setup: &BorrowBuySetup) -> Result<World, String> {
    setup.config().build_world().map_err(|e| e.to_string())
}

/// Simulated single-round profit across `samples` purchase sizes in
/// `[0, init_s]`, plus the closed-form optimum.
pub fn profit_curve(setup: &BorrowBuySetup, samples: usize) -> Result<ProfitCurve, String> {
    let world = world_for_bb(setup)?;
    let n = samples.clamp(2, 2000);
    let points = (0..n)
        .map(|i| {
            let x = setup.init_s * i as f64 / (n - 1) as f64;
            let r = bb_single_run(&world, x).map_err(|e| e.to_string())?.report;
            Ok(CurvePoint {
                out_s: x,
                profit: r.simulated_profit,
                feasible: r.feasible,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    let f = bb_single_formula(setup.init_s, setup.cr_m, setup.l0).map_err(|e| e.to_string())?;
    Ok(ProfitCurve {
        points,
        optimum_out_s: f.feasible.then_some(f.out_s),
        optimum_profit: f.feasible.then_some(f.profit),
    })
}

/// Multi-round profit and market residual after each round count.
pub fn round_trajectory(setup: &BorrowBuySetup, max_rounds: u32) -> Result<Trajectory, String> {
    let world = world_for_bb(setup)?;
    let points = (1..=max_rounds.clamp(1, 500))
        .map(|r| {
            let rep = bb_multi_run(&world, r).map_err(|e| e.to_string())?.report;
            Ok(RoundPoint {
                rounds: r,
                profit: rep.simulated_profit,
                residual_stable: rep.metric("residual_stable").unwrap_or(0.0),
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    let bound = bb_multi_formula(setup.init_s, setup.init_m, setup.cr_m, setup.l0).map_err(|e| e.to_string())?;
    let single = bb_single_formula(setup.init_s, setup.cr_m, setup.l0).map_err(|e| e.to_string())?;
    let single_round_profit = if single.feasible {
        bb_single_run(&world, single.out_s)
            .map_err(|e| e.to_string())?
            .report
            .simulated_profit
    } else {
        0.0
    };
    Ok(Trajectory {
        points,
        residual_bound: bound.residual_bound,
        single_round_profit,
    })
}

fn donate_outcome(world: &World, iter: u32, init_mint: f64, enhanced: bool) -> Result<DonateOutcome, String> {
    let inputs = bd_inputs(world).map_err(|e| e.to_string())?;
    let cf = match bd_formula(&inputs, iter, init_mint, enhanced) {
        Ok(cf) => cf,
        Err(e) => {
            return Ok(DonateOutcome {
                feasible: false,
                profit: 0.0,
                closed_form: 0.0,
                epsilon: 0.0,
                donate: 0.0,
                collateral_b: 0.0,
                failure: Some(e.to_string()),
            })
        }
    };
    let params = BdParams {
        init_mint,
        collateral_b: cf.collateral_b,
        donate: cf.donate,
        iter,
    };
    let run = if enhanced { bd_enhanced_run } else { bd_primitive_run };
    let Execution { report, .. } = run(world, &params).map_err(|e| e.to_string())?;
    Ok(DonateOutcome {
        feasible: report.feasible,
        profit: report.simulated_profit,
        closed_form: cf.profit,
        epsilon: cf.epsilon,
        donate: cf.donate,
        collateral_b: cf.collateral_b,
        failure: report.failure,
    })
}

/// Runs both borrow-and-donate variants with the closed-form collateral
/// and donation.
pub fn compare_donate(setup: &BorrowDonateSetup, iter: u32, init_mint: f64) -> Result<DonateComparison, String> {
    let world = setup.config().build_world().map_err(|e| e.to_string())?;
    Ok(DonateComparison {
        primitive: donate_outcome(&world, iter, init_mint, false)?,
        enhanced: donate_outcome(&world, iter, init_mint, true)?,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = profitCurve)]
pub fn profit_curve_js(init_s: f64, cr: f64, l0: f64, flash_fee: f64, samples: usize) -> Result<String, JsError> {
    let setup = BorrowBuySetup {
        init_s,
        init_m: 0.0,
        cr_m: cr,
        cr_s: cr,
        l0,
        flash_fee,
    };
    to_js(profit_curve(&setup, samples))
}

#[wasm_bindgen(js_name = roundTrajectory)]
pub fn round_trajectory_js(
    init_s: f64,
    init_m: f64,
    cr: f64,
    l0: f64,
    flash_fee: f64,
    max_rounds: u32,
) -> Result<String, JsError> {
    let setup = BorrowBuySetup {
        init_s,
        init_m,
        cr_m: cr,
        cr_s: cr,
        l0,
        flash_fee,
    };
    to_js(round_trajectory(&setup, max_rounds))
}

#[wasm_bindgen(js_name = compareDonate)]
#[allow(clippy::too_many_arguments)]
pub fn compare_donate_js(
    supply_ib: f64,
    borrowable_ib: f64,
    borrowable_s: f64,
    cr: f64,
    liq_incentive: f64,
    flash_fee: f64,
    iter: u32,
    init_mint: f64,
) -> Result<String, JsError> {
    let setup = BorrowDonateSetup {
        supply_ib,
        borrowable_ib,
        borrowable_s,
        cr_s: cr,
        cr_ib: cr,
        liq_incentive,
        flash_fee,
        flash_liquidity: 1e15,
    };
    to_js(compare_donate(&setup, iter, init_mint))
}
