//! Borrow-and-Donate: loop an interest-bearing token through a second
//! contract, shrink its free float, donate to the vault to inflate the
//! share price, and borrow everything against the inflated collateral.

use serde::{Deserialize, Serialize};

use super::formulas::{bd_formula, BdClosedForm, BdInputs};
use super::{Execution, Run, StrategyKind, StrategyParams, ACCOMPLICE};
use crate::envservices::LoanHandle;
use crate::error::{Result, SimError};
use crate::lending::RepaySource;
use crate::roleplay::Role;
use crate::world::{AgentId, AssetId, World};

/// Stand-in for the gas limit on mint/borrow iterations.
pub const DEFAULT_MAX_ITER: u32 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BdParams {
    pub init_mint: f64,
    pub collateral_b: f64,
    pub donate: f64,
    pub iter: u32,
}

impl BdParams {
    pub fn flash_total(&self) -> f64 {
        self.init_mint + self.collateral_b + self.donate
    }

    /// Fills `collateral_b` and `donate` from the closed form when absent.
    /// `iter` and `init_mint` are required.
    pub fn resolve(world: &World, params: &StrategyParams, enhanced: bool) -> Result<Self> {
        let max_iter = params.count("max_iter")?.unwrap_or(DEFAULT_MAX_ITER);
        let iter = params
            .count("iter")?
            .ok_or_else(|| SimError::InvalidParameter("missing parameter `iter`".into()))?;
        if iter > max_iter {
            return Err(SimError::InvalidParameter(format!(
                "iter {iter} exceeds max_iter {max_iter}"
            )));
        }
        let init_mint = params
            .non_negative("init_mint")?
            .ok_or_else(|| SimError::InvalidParameter("missing parameter `init_mint`".into()))?;
        let given_c = params.non_negative("collateral_b")?;
        let given_d = params.non_negative("donate")?;
        let (collateral_b, donate) = match (given_c, given_d) {
            (Some(c), Some(d)) => (c, d),
            _ => {
                let inputs = bd_inputs(world)?;
                let f = bd_formula(&inputs, iter, init_mint, enhanced)?;
                (given_c.unwrap_or(f.collateral_b), given_d.unwrap_or(f.donate))
            }
        };
        Ok(Self {
            init_mint,
            collateral_b,
            donate,
            iter,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
struct BdAssets {
    pub stable: AssetId,
    pub share: AssetId,
}

/// Reads the B&D inputs from the world. The vault's underlying is the
/// stable asset, and the share price must be exactly 1.
pub fn bd_inputs(world: &World) -> Result<BdInputs> {
    let vault = world.vault().ok_or(SimError::MissingComponent("vault"))?;
    let market = world.market().ok_or(SimError::MissingComponent("lending market"))?;
    let (stable, share) = (vault.underlying.clone(), vault.share.clone());
    let rate = |a: &AssetId| {
        market
            .listing(a)
            .map(|l| l.collateral_rate.value())
            .ok_or_else(|| SimError::NotListed(a.clone()))
    };
    if world.price(&stable)? != 1.0 {
        return Err(SimError::InvalidParameter(format!(
            "{stable} must be priced at exactly 1"
        )));
    }
    let price = vault.share_price()?;
    if (price - 1.0).abs() > 1e-12 {
        return Err(SimError::Infeasible(format!(
            "closed form needs an initial share price of 1, found {price}"
        )));
    }
    Ok(BdInputs {
        supply_ib: vault.supply(),
        borrowable_ib: market.cash(&share),
        borrowable_s: market.cash(&stable),
        cr_s: rate(&stable)?,
        cr_ib: rate(&share)?,
        liq_incentive: market.liq_incentive(),
        flash_fee: world.flashloans().map_or(0.0, |f| f.fee),
    })
}

fn assets(world: &World) -> Result<BdAssets> {
    let vault = world.vault().ok_or(SimError::MissingComponent("vault"))?;
    world.market().ok_or(SimError::MissingComponent("lending market"))?;
    Ok(BdAssets {
        stable: vault.underlying.clone(),
        share: vault.share.clone(),
    })
}

fn closed_form(world: &World, p: &BdParams, enhanced: bool) -> Option<BdClosedForm> {
    let inputs = bd_inputs(world).ok()?;
    bd_formula(&inputs, p.iter, p.init_mint, enhanced).ok()
}

/// Shared opening: flashloan, mint and deposit the seed, fund B, then loop
/// the interest-bearing token from B's borrow into A's deposit.
fn open_position(run: &mut Run, b: &AgentId, ids: &BdAssets, p: &BdParams) -> Result<Option<LoanHandle>> {
    let a = run.attacker.clone();
    let total = p.flash_total();
    let loan = if total > 0.0 {
        Some(run.act(&a, Role::Borrower, "flash borrow", |w| {
            w.flash_borrow(&a, &ids.stable, total)
        })?)
    } else {
        None
    };
    let minted = run.act(&a, Role::YieldFarmer, "mint seed", |w| w.mint(&a, p.init_mint))?;
    run.act(&a, Role::Lender, "deposit seed", |w| w.deposit(&a, &ids.share, minted))?;
    run.act(&a, Role::Lender, "fund accomplice", |w| {
        w.transfer(&a, b, &ids.stable, p.collateral_b)
    })?;
    run.act(b, Role::Lender, "post collateral", |w| {
        w.deposit(b, &ids.stable, p.collateral_b)
    })?;
    let mut borrowed_ib = 0.0;
    for _ in 0..p.iter {
        let amt = run.act(b, Role::Borrower, "borrow shares", |w| {
            let amt = w.max_borrow(b, &ids.share)?;
            w.borrow(b, &ids.share, amt)?;
            w.transfer(b, &a, &ids.share, amt)?;
            Ok(amt)
        })?;
        run.act(&a, Role::Lender, "redeposit shares", |w| w.deposit(&a, &ids.share, amt))?;
        borrowed_ib += amt;
    }
    run.metric("borrowed_ib", borrowed_ib);
    Ok(loan)
}

/// Withdraws every lendable share and redeems it, shrinking the supply.
fn shrink_float(run: &mut Run, ids: &BdAssets) -> Result<()> {
    let a = run.attacker.clone();
    let out = run.act(&a, Role::Lender, "withdraw shares", |w| {
        let amt = w.max_withdraw(&a, &ids.share)?;
        w.withdraw(&a, &ids.share, amt)?;
        Ok(amt)
    })?;
    run.act(&a, Role::YieldFarmer, "redeem shares", |w| w.redeem(&a, out))?;
    Ok(())
}

fn donate(run: &mut Run, ids: &BdAssets, amount: f64) -> Result<()> {
    let a = run.attacker.clone();
    let before = run.world.price(&ids.share)?;
    let after = run.act(&a, Role::YieldFarmer, "donate", |w| w.donate(&a, amount))?;
    run.metric("share_price_before_donation", before);
    run.metric("epsilon", after / before);
    Ok(())
}

/// Borrows whatever capacity and liquidity remain, then redeems any shares
/// the attacker holds.
fn exhaust(run: &mut Run, ids: &BdAssets) -> Result<()> {
    let a = run.attacker.clone();
    run.act(&a, Role::Borrower, "borrow remaining", |w| {
        for asset in [&ids.stable, &ids.share] {
            let amt = w.max_borrow(&a, asset)?;
            if amt > 0.0 {
                w.borrow(&a, asset, amt)?;
            }
        }
        Ok(())
    })?;
    let held = run.world.balance(&a, &ids.share);
    if held > 0.0 {
        run.act(&a, Role::YieldFarmer, "redeem proceeds", |w| w.redeem(&a, held))?;
    }
    Ok(())
}

/// B hands everything it holds to A; A settles the flashloan.
fn settle(run: &mut Run, b: &AgentId, loan: Option<LoanHandle>) -> Result<()> {
    let a = run.attacker.clone();
    if !run.world.holdings(b).is_empty() {
        run.act(b, Role::Borrower, "forward proceeds", |w| {
            for (asset, amt) in w.holdings(b) {
                w.transfer(b, &a, &asset, amt)?;
            }
            Ok(())
        })?;
    }
    if let Some(h) = loan {
        run.act(&a, Role::Borrower, "repay flashloan", |w| w.flash_repay(h))?;
    }
    Ok(())
}

fn validate(p: &BdParams) -> Result<()> {
    let ok = [p.init_mint, p.collateral_b, p.donate]
        .iter()
        .all(|v| v.is_finite() && *v >= 0.0);
    if !ok || p.iter == 0 {
        return Err(SimError::InvalidParameter(format!("invalid B&D parameters {p:?}")));
    }
    Ok(())
}

fn start(world: &World, p: &BdParams) -> Result<(Run, AgentId, BdAssets)> {
    validate(p)?;
    let ids = assets(world)?;
    let mut run = Run::new(world)?;
    let b = AgentId::new(ACCOMPLICE);
    run.control(&b);
    run.metric("iter", f64::from(p.iter));
    run.metric("init_mint", p.init_mint);
    run.metric("collateral_b", p.collateral_b);
    run.metric("donate", p.donate);
    run.metric("flash_total", p.flash_total());
    Ok((run, b, ids))
}

fn attach_closed_form(run: &mut Run, cf: Option<&BdClosedForm>) {
    if let Some(cf) = cf {
        run.metric("closed_form_epsilon", cf.epsilon);
        run.metric("closed_form_collateral_b", cf.collateral_b);
        run.metric("closed_form_donate", cf.donate);
    }
}

/// Original ordering: loop, shrink, donate, borrow against the inflated
/// collateral, settle.
pub fn bd_primitive_run(world: &World, p: &BdParams) -> Result<Execution> {
    let (mut run, b, ids) = start(world, p)?;
    let cf = closed_form(world, p, false);
    attach_closed_form(&mut run, cf.as_ref());
    let outcome = (|| -> Result<()> {
        let loan = open_position(&mut run, &b, &ids, p)?;
        shrink_float(&mut run, &ids)?;
        donate(&mut run, &ids, p.donate)?;
        let bad = run.world.bad_debt_of(&b)?;
        run.metric("accomplice_bad_debt", bad);
        exhaust(&mut run, &ids)?;
        settle(&mut run, &b, loan)
    })();
    Ok(run.finish(StrategyKind::BorrowDonate, outcome, cf.map(|c| c.profit)))
}

/// Drain-first ordering: B also borrows all stable liquidity before the
/// donation, and A then liquidates B, repaying B's share debt out of its
/// own share deposit and seizing B's stable collateral.
pub fn bd_enhanced_run(world: &World, p: &BdParams) -> Result<Execution> {
    let (mut run, b, ids) = start(world, p)?;
    let cf = closed_form(world, p, true);
    attach_closed_form(&mut run, cf.as_ref());
    let a = run.attacker.clone();
    let outcome = (|| -> Result<()> {
        let loan = open_position(&mut run, &b, &ids, p)?;
        run.act(&b, Role::Borrower, "drain stable", |w| {
            let amt = w.max_borrow(&b, &ids.stable)?;
            w.borrow(&b, &ids.stable, amt)?;
            w.transfer(&b, &a, &ids.stable, amt)?;
            Ok(())
        })?;
        shrink_float(&mut run, &ids)?;
        donate(&mut run, &ids, p.donate)?;
        if !run.world.is_healthy(&b)? {
            let seized = run.act(&a, Role::Liquidator, "liquidate accomplice", |w| {
                let market = w.market().ok_or(SimError::MissingComponent("lending market"))?;
                let liq = market.liq_incentive();
                let repayable = market.collateral(&a, &ids.share).min(market.debt(&b, &ids.share)).min(
                    market.collateral(&b, &ids.stable) * w.price(&ids.stable)? * (1.0 - liq) / w.price(&ids.share)?,
                );
                w.liquidate(&a, &b, &ids.share, repayable, &ids.stable, RepaySource::Deposit)
            })?;
            run.metric("seized", seized);
            run.act(&a, Role::Lender, "withdraw seized", |w| {
                let amt = w.max_withdraw(&a, &ids.stable)?;
                w.withdraw(&a, &ids.stable, amt)
            })?;
        }
        let bad = run.world.bad_debt_of(&b)?;
        run.metric("accomplice_bad_debt", bad);
        exhaust(&mut run, &ids)?;
        settle(&mut run, &b, loan)
    })();
    Ok(run.finish(StrategyKind::BorrowDonateEnhanced, outcome, cf.map(|c| c.profit)))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::envservices::{FlashloanProvider, PriceSource};
    use crate::lending::{CollateralRate, LendingMarket};
    use crate::strategies::formulas::donation_epsilon;
    use crate::vault::InterestBearingVault;
    use crate::world::AssetClass;
    use approx::assert_relative_eq;
    use std::collections::BTreeSet;

    pub(crate) fn bd_world(i: &BdInputs) -> World {
        let (usd, yusd) = (AssetId::new("USD"), AssetId::new("yUSD"));
        let mut w = World::new();
        w.register_asset(usd.clone(), AssetClass::Stable).unwrap();
        w.register_asset(yusd.clone(), AssetClass::InterestBearing).unwrap();
        w.set_price_source(usd.clone(), PriceSource::Fixed(1.0)).unwrap();
        w.set_price_source(yusd.clone(), PriceSource::VaultPrice).unwrap();
        let (lender, holders) = (AgentId::new("lender"), AgentId::new("holders"));
        w.register_agent(lender.clone()).unwrap();
        w.register_agent(holders.clone()).unwrap();
        w.install_vault(
            InterestBearingVault::new(yusd.clone(), usd.clone()),
            &holders,
            i.supply_ib,
            i.supply_ib,
        )
        .unwrap();
        w.install_market(
            LendingMarket::new(i.liq_incentive)
                .unwrap()
                .list(usd.clone(), CollateralRate::new(i.cr_s).unwrap())
                .list(yusd.clone(), CollateralRate::new(i.cr_ib).unwrap()),
        )
        .unwrap();
        w.install_flashloans(
            FlashloanProvider::new(i.flash_fee)
                .unwrap()
                .with_liquidity(usd.clone(), 1e15)
                .unwrap(),
        )
        .unwrap();
        w.transfer(&holders, &lender, &yusd, i.borrowable_ib).unwrap();
        w.deposit(&lender, &yusd, i.borrowable_ib).unwrap();
        w.credit(&lender, &usd, i.borrowable_s).unwrap();
        w.deposit(&lender, &usd, i.borrowable_s).unwrap();
        w
    }

    pub(crate) fn desk() -> BdInputs {
        BdInputs {
            supply_ib: 1000.0,
            borrowable_ib: 400.0,
            borrowable_s: 5000.0,
            cr_s: 0.9,
            cr_ib: 0.9,
            liq_incentive: 0.1,
            flash_fee: 0.0,
        }
    }

    fn formula_params(i: &BdInputs, iter: u32, m: f64, enhanced: bool) -> BdParams {
        let f = bd_formula(i, iter, m, enhanced).unwrap();
        BdParams {
            init_mint: m,
            collateral_b: f.collateral_b,
            donate: f.donate,
            iter,
        }
    }

    #[test]
    fn desk_primitive_matches_closed_form() {
        let i = desk();
        let w = bd_world(&i);
        let p = formula_params(&i, 5, 100.0, false);
        let x = bd_primitive_run(&w, &p).unwrap();
        let r = &x.report;
        assert!(r.feasible, "{:?}", r.failure);
        let f = bd_formula(&i, 5, 100.0, false).unwrap();
        assert_relative_eq!(r.simulated_profit, f.profit, max_relative = 1e-9);
        let eps = donation_epsilon(i.supply_ib, i.borrowable_ib, p.donate).unwrap();
        assert_relative_eq!(r.metric("epsilon").unwrap(), eps, max_relative = 1e-12);
        // B's debt of D shares at price epsilon against its stable collateral
        let bad = f.epsilon * 2500.0 - f.collateral_b;
        assert!(bad > 0.0);
        assert_relative_eq!(r.residual.bad_debt, bad, max_relative = 1e-9);
        assert_eq!(
            r.roles().clone(),
            BTreeSet::from([Role::Lender, Role::Borrower, Role::YieldFarmer])
        );
        assert_eq!(r.metric("unattributed_ops"), Some(0.0));
        x.world.check_conservation(1e-12).unwrap();
    }

    #[test]
    fn desk_enhanced_matches_closed_form_and_beats_primitive() {
        let i = desk();
        let w = bd_world(&i);
        let e = bd_enhanced_run(&w, &formula_params(&i, 5, 100.0, true)).unwrap();
        let r = &e.report;
        assert!(r.feasible, "{:?}", r.failure);
        assert_relative_eq!(r.simulated_profit, 3857.1428571, max_relative = 1e-9);
        assert!(r.roles().contains(&Role::Liquidator));
        let p = bd_primitive_run(&w, &formula_params(&i, 5, 100.0, false)).unwrap();
        assert!(r.simulated_profit > p.report.simulated_profit);
        e.world.check_conservation(1e-12).unwrap();
    }

    #[test]
    fn no_manipulation_no_gain() {
        let mut i = desk();
        i.flash_fee = 0.0009;
        let w = bd_world(&i);
        let p = BdParams {
            init_mint: 100.0,
            collateral_b: 1000.0,
            donate: 0.0,
            iter: 1,
        };
        let r = bd_primitive_run(&w, &p).unwrap().report;
        assert_eq!(r.metric("epsilon"), Some(1.0));
        assert!(r.simulated_profit <= 0.0);
    }

    #[test]
    fn excess_donation_is_wasted() {
        let i = desk();
        let w = bd_world(&i);
        let mut p = formula_params(&i, 5, 100.0, false);
        let best = bd_primitive_run(&w, &p).unwrap().report.simulated_profit;
        p.donate *= 1.2;
        let worse = bd_primitive_run(&w, &p).unwrap().report.simulated_profit;
        assert!(worse < best);
    }

    #[test]
    fn params_resolve_from_closed_form() {
        let i = desk();
        let w = bd_world(&i);
        let params = StrategyParams::new().with("iter", 5.0).with("init_mint", 100.0);
        let p = BdParams::resolve(&w, &params, false).unwrap();
        assert_relative_eq!(p.collateral_b, 2500.0 / 0.9, max_relative = 1e-12);
        let too_many = params.clone().with("iter", 60.0);
        assert!(BdParams::resolve(&w, &too_many, false).is_err());
        assert!(BdParams::resolve(&w, &StrategyParams::new().with("iter", 5.0), false).is_err());
    }
}
