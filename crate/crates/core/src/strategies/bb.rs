//! Borrow-and-Buy: buy the thin collateral token, post it, borrow against
//! its inflated spot price, and optionally repeat in alternating directions.

use serde::{Deserialize, Serialize};

use super::formulas::{
    bb_multi_formula, bought_collateral_value, multi_profit_identity, multi_profit_with_residual, purchase_for_borrow,
};
use super::{Execution, Run, StrategyKind, ATTACKER};
use crate::error::{Result, SimError};
use crate::roleplay::Role;
use crate::world::{AgentId, AssetId, World};

/// Cap on alternating rounds when none is given.
pub const DEFAULT_MAX_ROUNDS: u32 = 5000;

/// A round is worth running only if it nets more than this fraction of the
/// liquidity it drains.
const ROUND_PROFIT_TOL: f64 = 1e-12;

/// Scenario quantities the B&B expressions read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BbInputs {
    pub stable: AssetId,
    pub manipulated: AssetId,
    /// Stable liquidity of the market.
    pub init_s: f64,
    /// Manipulated liquidity of the market.
    pub init_m: f64,
    pub cr_m: f64,
    pub cr_s: f64,
    pub reserve_s: f64,
    pub reserve_m: f64,
    pub flash_fee: f64,
}

impl BbInputs {
    pub fn from_world(world: &World) -> Result<Self> {
        let pool = world.pool().ok_or(SimError::MissingComponent("pool"))?;
        let market = world.market().ok_or(SimError::MissingComponent("lending market"))?;
        let rate = |a: &AssetId| {
            market
                .listing(a)
                .map(|l| l.collateral_rate.value())
                .ok_or_else(|| SimError::NotListed(a.clone()))
        };
        if world.price(&pool.stable)? != 1.0 {
            return Err(SimError::InvalidParameter(format!(
                "{} must be priced at exactly 1",
                pool.stable
            )));
        }
        Ok(Self {
            init_s: market.cash(&pool.stable),
            init_m: market.cash(&pool.manipulated),
            cr_m: rate(&pool.manipulated)?,
            cr_s: rate(&pool.stable)?,
            reserve_s: pool.reserve_s(),
            reserve_m: pool.reserve_m(),
            flash_fee: world.flashloans().map_or(0.0, |f| f.fee),
            stable: pool.stable.clone(),
            manipulated: pool.manipulated.clone(),
        })
    }
}

/// Purchase cost of `x` for `agent`: its own funds when they suffice,
/// otherwise a flashloan repaid at `x / (1 - fee)`.
fn funding_cost(world: &World, agent: &AgentId, pay: &AssetId, x: f64, fee: f64) -> f64 {
    if world.balance(agent, pay) >= x {
        x
    } else {
        x / (1.0 - fee)
    }
}

struct RoundOutcome {
    borrowed: f64,
    liquidity_capped: bool,
    flash_fee: f64,
}

/// One buy, deposit, borrow cycle. `pay` is both spent and borrowed; the
/// other pool asset is the collateral.
fn execute_round(
    run: &mut Run,
    agent: &AgentId,
    pay: &AssetId,
    collateral: &AssetId,
    x: f64,
    sell_proceeds: bool,
) -> Result<RoundOutcome> {
    let start_balance = run.world.balance(agent, pay);
    let loan = if start_balance >= x {
        None
    } else {
        Some(run.act(agent, Role::Borrower, "flash borrow", |w| w.flash_borrow(agent, pay, x))?)
    };
    let bought = run.act(agent, Role::Trader, "buy collateral", |w| w.execute_swap(agent, pay, x))?;
    run.act(agent, Role::Lender, "deposit collateral", |w| {
        w.deposit(agent, collateral, bought)
    })?;
    let mut outcome = run.act(agent, Role::Borrower, "borrow", |w| {
        let cash = w.market().map_or(0.0, |m| m.cash(pay));
        let v = w.account_value(agent)?;
        let by_capacity = (v.capacity - v.debt_value).max(0.0) / w.price(pay)?;
        let amount = w.max_borrow(agent, pay)?;
        w.borrow(agent, pay, amount)?;
        Ok(RoundOutcome {
            borrowed: amount,
            liquidity_capped: by_capacity > cash * (1.0 + 1e-9),
            flash_fee: 0.0,
        })
    })?;
    if let Some(h) = loan {
        outcome.flash_fee = run.act(agent, Role::Borrower, "repay flashloan", |w| w.flash_repay(h))?;
    }
    if sell_proceeds {
        let surplus = run.world.balance(agent, pay) - start_balance;
        if surplus > 0.0 {
            run.act(agent, Role::Trader, "sell proceeds", |w| {
                w.execute_swap(agent, pay, surplus)
            })?;
        }
    }
    if *agent != run.attacker {
        let attacker = run.attacker.clone();
        run.act(agent, Role::Borrower, "forward proceeds", |w| {
            for (asset, amt) in w.holdings(agent) {
                w.transfer(agent, &attacker, &asset, amt)?;
            }
            Ok(())
        })?;
    }
    Ok(outcome)
}

/// Single round with purchase size `out_s`.
pub fn bb_single_run(world: &World, out_s: f64) -> Result<Execution> {
    if !(out_s.is_finite() && out_s >= 0.0) {
        return Err(SimError::InvalidParameter(format!(
            "out_s must be non-negative, got {out_s}"
        )));
    }
    let inputs = BbInputs::from_world(world)?;
    let mut run = Run::new(world)?;
    let attacker = run.attacker.clone();
    let cost = funding_cost(&run.world, &attacker, &inputs.stable, out_s, inputs.flash_fee);
    let capacity = inputs.cr_m * bought_collateral_value(out_s, inputs.reserve_s);
    let closed_form = capacity.min(inputs.init_s) - cost;
    run.metric("out_s", out_s);
    run.metric("init_s", inputs.init_s);

    let outcome = execute_round(&mut run, &attacker, &inputs.stable, &inputs.manipulated, out_s, false);
    let outcome = outcome.map(|o| {
        run.metric("borrowed", o.borrowed);
        run.flags.liquidity_capped = o.liquidity_capped;
    });
    run.metric(
        "residual_stable",
        run.world.market().map_or(0.0, |m| m.cash(&inputs.stable)),
    );
    Ok(run.finish(StrategyKind::BorrowBuy, outcome, Some(closed_form)))
}

/// Per-round optimal purchase for the given direction, if that round pays.
fn plan_round(world: &World, inputs: &BbInputs, agent: &AgentId, forward: bool) -> Result<Option<f64>> {
    let (pay, collateral) = if forward {
        (&inputs.stable, &inputs.manipulated)
    } else {
        (&inputs.manipulated, &inputs.stable)
    };
    let market = world.market().ok_or(SimError::MissingComponent("lending market"))?;
    let pool = world.pool().ok_or(SimError::MissingComponent("pool"))?;
    let liquidity = market.cash(pay);
    let cr = market
        .listing(collateral)
        .ok_or_else(|| SimError::NotListed(collateral.clone()))?
        .collateral_rate
        .value();
    if liquidity <= 0.0 || cr <= 0.0 {
        return Ok(None);
    }
    let x = purchase_for_borrow(liquidity, cr, pool.reserve_of(pay));
    let cost = funding_cost(world, agent, pay, x, inputs.flash_fee);
    Ok((liquidity - cost > ROUND_PROFIT_TOL * liquidity.max(1.0)).then_some(x))
}

fn round_agent(round: u32) -> AgentId {
    if round == 1 {
        AgentId::new(ATTACKER)
    } else {
        AgentId::new(format!("{ATTACKER}_r{round}"))
    }
}

/// Alternating multi-round attack. Each round uses a fresh controlled
/// contract, sizes its purchase to drain the borrowed side exactly, and
/// the next round runs in the opposite direction. Stops when a round no
/// longer pays or after `max_rounds`.
pub fn bb_multi_run(world: &World, max_rounds: u32) -> Result<Execution> {
    if max_rounds == 0 {
        return Err(SimError::InvalidParameter("rounds must be at least 1".into()));
    }
    let inputs = BbInputs::from_world(world)?;
    let bound = bb_multi_formula(inputs.init_s, inputs.init_m, inputs.cr_m, inputs.reserve_s)?;
    let mut run = Run::new(world)?;
    let mut rounds = 0u32;
    let mut forward_rounds = 0u32;
    // flash fees paid on each side; manipulated-side fees shrink what is
    // sold into the pool rather than costing stable directly
    let (mut fees_s, mut fees_m) = (0.0, 0.0);
    let mut next: Option<bool> = None;

    let outcome = (|| -> Result<()> {
        while rounds < max_rounds {
            let agent = round_agent(rounds + 1);
            let direction = match next {
                Some(d) => d,
                None if plan_round(&run.world, &inputs, &agent, true)?.is_some() => true,
                None => false,
            };
            let Some(x) = plan_round(&run.world, &inputs, &agent, direction)? else {
                break;
            };
            run.control(&agent);
            let (pay, collateral) = if direction {
                (&inputs.stable, &inputs.manipulated)
            } else {
                (&inputs.manipulated, &inputs.stable)
            };
            let o = execute_round(&mut run, &agent, pay, collateral, x, !direction)?;
            run.flags.liquidity_capped |= o.liquidity_capped;
            if direction {
                fees_s += o.flash_fee;
            } else {
                fees_m += o.flash_fee;
            }
            rounds += 1;
            forward_rounds += u32::from(direction);
            next = Some(!direction);
        }
        Ok(())
    })();

    let market = run.world.market().ok_or(SimError::MissingComponent("lending market"))?;
    let s_left = market.cash(&inputs.stable);
    let m_left = market.cash(&inputs.manipulated);
    let closed_form = multi_profit_identity(
        inputs.init_s,
        inputs.init_m,
        inputs.reserve_s,
        inputs.reserve_m,
        s_left,
        m_left + fees_m,
    ) - fees_s;
    run.flags.residual_within_bound = Some(s_left <= bound.residual_bound + 1e-9 * bound.residual_bound.max(1.0));
    run.metric("rounds", f64::from(rounds));
    run.metric("forward_rounds", f64::from(forward_rounds));
    run.metric("residual_stable", s_left);
    run.metric("residual_manipulated", m_left);
    run.metric("flash_fees_stable", fees_s);
    run.metric("flash_fees_manipulated", fees_m);
    run.metric("residual_bound", bound.residual_bound);
    run.metric("profit_at_bound", bound.profit_at_bound);
    run.metric(
        "profit_with_measured_residual",
        multi_profit_with_residual(inputs.init_s, inputs.init_m, inputs.reserve_s, s_left),
    );
    Ok(run.finish(StrategyKind::BorrowBuyMulti, outcome, Some(closed_form)))
}
