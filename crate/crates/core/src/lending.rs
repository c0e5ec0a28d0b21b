//! Collateralized lending market with per-asset collateral rates.
//!
//! Deposits are both collateral and lendable liquidity, so an asset's cash
//! is `supplied - borrowed`. Health is evaluated at the oracle's current
//! prices every time it is needed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::world::{check_amount, covers, AgentId, AssetId, Op, World};

/// Relative slack on the health inequality, absorbing rounding when an
/// account borrows exactly up to its capacity.
pub const HEALTH_TOL: f64 = 1e-12;

/// Maximum borrowable value per unit of collateral value, in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct CollateralRate(f64);

impl CollateralRate {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(SimError::InvalidParameter(format!(
                "collateral rate must lie in [0, 1], got {value}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for CollateralRate {
    type Error = SimError;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CollateralRate> for f64 {
    fn from(cr: CollateralRate) -> f64 {
        cr.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Listing {
    pub collateral_rate: CollateralRate,
    pub supplied: f64,
    pub borrowed: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Account {
    pub collateral: BTreeMap<AssetId, f64>,
    pub debt: BTreeMap<AssetId, f64>,
}

impl Account {
    fn has_debt(&self) -> bool {
        self.debt.values().any(|d| *d > 0.0)
    }
}

/// Where a liquidator's repayment comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepaySource {
    Wallet,
    /// The liquidator's own deposit of the repaid asset.
    Deposit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LendingMarket {
    listings: BTreeMap<AssetId, Listing>,
    accounts: BTreeMap<AgentId, Account>,
    liq_incentive: f64,
}

impl LendingMarket {
    pub fn new(liq_incentive: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&liq_incentive) {
            return Err(SimError::InvalidParameter(format!(
                "liquidation incentive must lie in [0, 1), got {liq_incentive}"
            )));
        }
        Ok(Self {
            listings: BTreeMap::new(),
            accounts: BTreeMap::new(),
            liq_incentive,
        })
    }

    pub fn list(mut self, asset: AssetId, rate: CollateralRate) -> Self {
        self.listings.insert(
            asset,
            Listing {
                collateral_rate: rate,
                supplied: 0.0,
                borrowed: 0.0,
            },
        );
        self
    }

    pub fn liq_incentive(&self) -> f64 {
        self.liq_incentive
    }

    pub fn listing(&self, asset: &AssetId) -> Option<&Listing> {
        self.listings.get(asset)
    }

    pub fn listed(&self) -> impl Iterator<Item = &AssetId> {
        self.listings.keys()
    }

    /// Lendable liquidity of `asset`.
    pub fn cash(&self, asset: &AssetId) -> f64 {
        self.listings
            .get(asset)
            .map_or(0.0, |l| (l.supplied - l.borrowed).max(0.0))
    }

    pub fn account(&self, agent: &AgentId) -> Option<&Account> {
        self.accounts.get(agent)
    }

    pub fn accounts(&self) -> impl Iterator<Item = (&AgentId, &Account)> {
        self.accounts.iter()
    }

    pub fn collateral(&self, agent: &AgentId, asset: &AssetId) -> f64 {
        self.accounts
            .get(agent)
            .and_then(|a| a.collateral.get(asset))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn debt(&self, agent: &AgentId, asset: &AssetId) -> f64 {
        self.accounts
            .get(agent)
            .and_then(|a| a.debt.get(asset))
            .copied()
            .unwrap_or(0.0)
    }

    fn rate(&self, asset: &AssetId) -> Result<f64> {
        self.listings
            .get(asset)
            .map(|l| l.collateral_rate.value())
            .ok_or_else(|| SimError::NotListed(asset.clone()))
    }

    fn listing_mut(&mut self, asset: &AssetId) -> Result<&mut Listing> {
        self.listings
            .get_mut(asset)
            .ok_or_else(|| SimError::NotListed(asset.clone()))
    }

    fn account_mut(&mut self, agent: &AgentId) -> &mut Account {
        self.accounts.entry(agent.clone()).or_default()
    }
}

fn sub_clamped(map: &mut BTreeMap<AssetId, f64>, asset: &AssetId, amount: f64) {
    if let Some(v) = map.get_mut(asset) {
        *v = (*v - amount).max(0.0);
    }
}

/// Valuation of one account at current oracle prices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccountValue {
    pub collateral_value: f64,
    pub capacity: f64,
    pub debt_value: f64,
}

impl AccountValue {
    pub fn is_healthy(&self) -> bool {
        self.debt_value <= self.capacity * (1.0 + HEALTH_TOL)
    }
}

impl World {
    /// Installs an empty market. Liquidity is added through deposits.
    pub fn install_market(&mut self, market: LendingMarket) -> Result<()> {
        for asset in market.listings.keys() {
            self.ensure_asset(asset)?;
        }
        self.market = Some(market);
        Ok(())
    }

    fn market_ref(&self) -> Result<&LendingMarket> {
        self.market.as_ref().ok_or(SimError::MissingComponent("lending market"))
    }

    fn market_mut(&mut self) -> Result<&mut LendingMarket> {
        self.market.as_mut().ok_or(SimError::MissingComponent("lending market"))
    }

    /// Collateral value, borrow capacity and debt value of an account.
    pub fn account_value(&self, agent: &AgentId) -> Result<AccountValue> {
        let market = self.market_ref()?;
        let mut v = AccountValue {
            collateral_value: 0.0,
            capacity: 0.0,
            debt_value: 0.0,
        };
        let Some(account) = market.account(agent) else {
            return Ok(v);
        };
        for (asset, amt) in &account.collateral {
            if *amt > 0.0 {
                let value = amt * self.price(asset)?;
                v.collateral_value += value;
                v.capacity += value * market.rate(asset)?;
            }
        }
        for (asset, amt) in &account.debt {
            if *amt > 0.0 {
                v.debt_value += amt * self.price(asset)?;
            }
        }
        Ok(v)
    }

    pub fn is_healthy(&self, agent: &AgentId) -> Result<bool> {
        let market = self.market_ref()?;
        match market.account(agent) {
            Some(acc) if acc.has_debt() => Ok(self.account_value(agent)?.is_healthy()),
            _ => Ok(true),
        }
    }

    pub fn deposit(&mut self, agent: &AgentId, asset: &AssetId, amount: f64) -> Result<()> {
        self.ensure_known(agent, asset)?;
        check_amount(amount)?;
        self.market_ref()?.rate(asset)?;
        let moved = self.take(agent, asset, amount)?;
        let market = self.market_mut()?;
        market.listing_mut(asset)?.supplied += moved;
        *market.account_mut(agent).collateral.entry(asset.clone()).or_insert(0.0) += moved;
        self.record(
            agent,
            Op::Deposit {
                asset: asset.clone(),
                amount: moved,
            },
        );
        Ok(())
    }

    /// Largest amount of `asset` the agent can borrow now: the smaller of
    /// its remaining capacity and the market's cash.
    pub fn max_borrow(&self, agent: &AgentId, asset: &AssetId) -> Result<f64> {
        let market = self.market_ref()?;
        market.rate(asset)?;
        let cash = market.cash(asset);
        let v = self.account_value(agent)?;
        let headroom = (v.capacity - v.debt_value).max(0.0);
        if headroom == 0.0 || cash == 0.0 {
            return Ok(0.0);
        }
        Ok((headroom / self.price(asset)?).min(cash))
    }

    pub fn borrow(&mut self, agent: &AgentId, asset: &AssetId, amount: f64) -> Result<()> {
        self.ensure_known(agent, asset)?;
        check_amount(amount)?;
        let market = self.market_ref()?;
        market.rate(asset)?;
        let cash = market.cash(asset);
        if !covers(cash, amount) {
            return Err(SimError::LiquidityExhausted {
                asset: asset.clone(),
                requested: amount,
                available: cash,
            });
        }
        let amount = amount.min(cash);
        if amount == 0.0 {
            return Ok(());
        }
        let price = self.price(asset)?;
        let v = self.account_value(agent)?;
        if v.debt_value + amount * price > v.capacity * (1.0 + HEALTH_TOL) {
            return Err(SimError::CapacityExceeded {
                agent: agent.clone(),
                asset: asset.clone(),
                requested: amount,
                capacity: (v.capacity - v.debt_value).max(0.0) / price,
            });
        }
        let market = self.market_mut()?;
        market.listing_mut(asset)?.borrowed += amount;
        *market.account_mut(agent).debt.entry(asset.clone()).or_insert(0.0) += amount;
        self.give(agent, asset, amount);
        self.record(
            agent,
            Op::Borrow {
                asset: asset.clone(),
                amount,
            },
        );
        Ok(())
    }

    pub fn repay(&mut self, agent: &AgentId, asset: &AssetId, amount: f64) -> Result<()> {
        self.ensure_known(agent, asset)?;
        check_amount(amount)?;
        let debt = self.market_ref()?.debt(agent, asset);
        if !covers(debt, amount) {
            return Err(SimError::Overpay {
                asset: asset.clone(),
                amount,
                debt,
            });
        }
        let paid = self.take(agent, asset, amount.min(debt))?;
        let market = self.market_mut()?;
        let listing = market.listing_mut(asset)?;
        listing.borrowed = (listing.borrowed - paid).max(0.0);
        sub_clamped(&mut market.account_mut(agent).debt, asset, paid);
        self.record(
            agent,
            Op::Repay {
                asset: asset.clone(),
                amount: paid,
            },
        );
        Ok(())
    }

    /// Largest amount of `asset` collateral the agent can withdraw now.
    pub fn max_withdraw(&self, agent: &AgentId, asset: &AssetId) -> Result<f64> {
        let market = self.market_ref()?;
        let rate = market.rate(asset)?;
        let held = market.collateral(agent, asset).min(market.cash(asset));
        let has_debt = market.account(agent).is_some_and(Account::has_debt);
        if !has_debt || held == 0.0 {
            return Ok(held);
        }
        let v = self.account_value(agent)?;
        let per_unit = self.price(asset)? * rate;
        if per_unit == 0.0 {
            return Ok(held);
        }
        Ok(held.min(((v.capacity - v.debt_value) / per_unit).max(0.0)))
    }

    pub fn withdraw(&mut self, agent: &AgentId, asset: &AssetId, amount: f64) -> Result<()> {
        self.ensure_known(agent, asset)?;
        check_amount(amount)?;
        let market = self.market_ref()?;
        market.rate(asset)?;
        let held = market.collateral(agent, asset);
        if !covers(held, amount) {
            return Err(SimError::InsufficientBalance {
                agent: agent.clone(),
                asset: asset.clone(),
                needed: amount,
                available: held,
            });
        }
        let cash = market.cash(asset);
        if !covers(cash, amount) {
            return Err(SimError::LiquidityExhausted {
                asset: asset.clone(),
                requested: amount,
                available: cash,
            });
        }
        let amount = amount.min(held).min(cash);
        let mut trial = self.market_ref()?.clone();
        sub_clamped(&mut trial.account_mut(agent).collateral, asset, amount);
        let previous = self.market.replace(trial);
        let healthy = self.is_healthy(agent);
        self.market = previous;
        if !healthy? {
            return Err(SimError::UnhealthyWithdraw {
                agent: agent.clone(),
                asset: asset.clone(),
                amount,
            });
        }
        let market = self.market_mut()?;
        let listing = market.listing_mut(asset)?;
        listing.supplied = (listing.supplied - amount).max(listing.borrowed);
        sub_clamped(&mut market.account_mut(agent).collateral, asset, amount);
        self.give(agent, asset, amount);
        self.record(
            agent,
            Op::Withdraw {
                asset: asset.clone(),
                amount,
            },
        );
        Ok(())
    }

    /// Repays `amount` of the target's `repay_asset` debt and seizes
    /// collateral worth `amount / (1 - liq_incentive)` in `seize_asset`.
    /// The seized collateral stays in the market as the liquidator's
    /// deposit. Returns the seized amount.
    pub fn liquidate(
        &mut self,
        liquidator: &AgentId,
        target: &AgentId,
        repay_asset: &AssetId,
        amount: f64,
        seize_asset: &AssetId,
        source: RepaySource,
    ) -> Result<f64> {
        self.ensure_known(liquidator, repay_asset)?;
        self.ensure_known(target, seize_asset)?;
        check_amount(amount)?;
        if liquidator == target {
            return Err(SimError::InvalidParameter("self-liquidation".into()));
        }
        if self.is_healthy(target)? {
            return Err(SimError::TargetHealthy(target.clone()));
        }
        let market = self.market_ref()?;
        market.rate(repay_asset)?;
        market.rate(seize_asset)?;
        let debt = market.debt(target, repay_asset);
        if !covers(debt, amount) {
            return Err(SimError::Overpay {
                asset: repay_asset.clone(),
                amount,
                debt,
            });
        }
        let amount = amount.min(debt);
        let seized = amount * self.price(repay_asset)? / (1.0 - market.liq_incentive) / self.price(seize_asset)?;
        let available = market.collateral(target, seize_asset);
        if !covers(available, seized) {
            return Err(SimError::SeizureExceedsCollateral {
                asset: seize_asset.clone(),
                seize: seized,
                available,
            });
        }
        let seized = seized.min(available);

        match source {
            RepaySource::Wallet => {
                self.take(liquidator, repay_asset, amount)?;
            }
            RepaySource::Deposit => {
                let own = market.collateral(liquidator, repay_asset);
                if !covers(own, amount) {
                    return Err(SimError::InsufficientBalance {
                        agent: liquidator.clone(),
                        asset: repay_asset.clone(),
                        needed: amount,
                        available: own,
                    });
                }
            }
        }

        let market = self.market_mut()?;
        let listing = market.listing_mut(repay_asset)?;
        listing.borrowed = (listing.borrowed - amount).max(0.0);
        if source == RepaySource::Deposit {
            listing.supplied = (listing.supplied - amount).max(listing.borrowed);
            sub_clamped(&mut market.account_mut(liquidator).collateral, repay_asset, amount);
        }
        let t = market.account_mut(target);
        sub_clamped(&mut t.debt, repay_asset, amount);
        sub_clamped(&mut t.collateral, seize_asset, seized);
        *market
            .account_mut(liquidator)
            .collateral
            .entry(seize_asset.clone())
            .or_insert(0.0) += seized;

        if source == RepaySource::Deposit && !self.is_healthy(liquidator)? {
            return Err(SimError::UnhealthyWithdraw {
                agent: liquidator.clone(),
                asset: repay_asset.clone(),
                amount,
            });
        }
        self.record(
            liquidator,
            Op::Liquidate {
                target: target.clone(),
                repay_asset: repay_asset.clone(),
                repaid: amount,
                seize_asset: seize_asset.clone(),
                seized,
            },
        );
        Ok(seized)
    }

    /// Debt value in excess of raw collateral value, summed over unhealthy
    /// accounts, at current oracle prices.
    pub fn bad_debt(&self) -> Result<f64> {
        let market = self.market_ref()?;
        let mut total = 0.0;
        for (agent, account) in market.accounts() {
            if !account.has_debt() {
                continue;
            }
            let v = self.account_value(agent)?;
            if !v.is_healthy() {
                total += (v.debt_value - v.collateral_value).max(0.0);
            }
        }
        Ok(total)
    }

    /// Bad debt attributable to one account (zero when healthy).
    pub fn bad_debt_of(&self, agent: &AgentId) -> Result<f64> {
        let v = self.account_value(agent)?;
        Ok(if v.is_healthy() {
            0.0
        } else {
            (v.debt_value - v.collateral_value).max(0.0)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amm::ConstantProductPool;
    use crate::envservices::PriceSource;
    use crate::world::AssetClass;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn usd() -> AssetId {
        "USD".into()
    }
    fn tka() -> AssetId {
        "TKA".into()
    }

    /// Pool (1000, 1000), market with `stable` USD supplied by a lender.
    fn world(stable: f64, cr_m: f64, liq: f64) -> (World, AgentId) {
        let mut w = World::new();
        w.register_asset(usd(), AssetClass::Stable).unwrap();
        w.register_asset(tka(), AssetClass::Manipulated).unwrap();
        w.set_price_source(usd(), PriceSource::Fixed(1.0)).unwrap();
        w.set_price_source(tka(), PriceSource::AmmSpot).unwrap();
        w.install_pool(ConstantProductPool::symmetric(usd(), tka(), 1000.0).unwrap())
            .unwrap();
        w.install_market(
            LendingMarket::new(liq)
                .unwrap()
                .list(usd(), CollateralRate::new(0.9).unwrap())
                .list(tka(), CollateralRate::new(cr_m).unwrap()),
        )
        .unwrap();
        let lender = AgentId::new("lender");
        let a = AgentId::new("a");
        w.register_agent(lender.clone()).unwrap();
        w.register_agent(a.clone()).unwrap();
        w.credit(&lender, &usd(), stable).unwrap();
        w.deposit(&lender, &usd(), stable).unwrap();
        (w, a)
    }

    #[test]
    fn deposit_is_recorded_and_raises_capacity() {
        let (mut w, a) = world(1000.0, 0.8, 0.0);
        w.credit(&a, &tka(), 50.0).unwrap();
        w.deposit(&a, &tka(), 0.0).unwrap();
        assert_eq!(w.account_value(&a).unwrap().capacity, 0.0);
        w.deposit(&a, &tka(), 50.0).unwrap();
        assert_eq!(w.market().unwrap().collateral(&a, &tka()), 50.0);
        let expected = 50.0 * w.price(&tka()).unwrap() * 0.8;
        assert_relative_eq!(w.account_value(&a).unwrap().capacity, expected, max_relative = 1e-12);
        w.check_conservation(1e-12).unwrap();
    }

    #[test]
    fn borrow_against_manipulated_collateral() {
        let (mut w, a) = world(1000.0, 0.8, 0.0);
        assert_eq!(w.max_borrow(&a, &usd()).unwrap(), 0.0);
        assert!(matches!(
            w.borrow(&a, &usd(), 1.0),
            Err(SimError::CapacityExceeded { .. })
        ));
        w.credit(&a, &usd(), 100.0).unwrap();
        let got = w.execute_swap(&a, &usd(), 100.0).unwrap();
        w.deposit(&a, &tka(), got).unwrap();
        let max = w.max_borrow(&a, &usd()).unwrap();
        // 90.909.. at price 1.21 and CR 0.8, i.e. (1 + 0.1) * 100 * 0.8
        assert_relative_eq!(max, 88.0, max_relative = 1e-12);
        w.borrow(&a, &usd(), max).unwrap();
        assert!(w.is_healthy(&a).unwrap());
        w.check_conservation(1e-12).unwrap();
    }

    #[test]
    fn liquidity_caps_borrowing() {
        let (mut w, a) = world(50.0, 0.8, 0.0);
        w.credit(&a, &usd(), 100.0).unwrap();
        let got = w.execute_swap(&a, &usd(), 100.0).unwrap();
        w.deposit(&a, &tka(), got).unwrap();
        assert_eq!(w.max_borrow(&a, &usd()).unwrap(), 50.0);
        assert!(matches!(
            w.borrow(&a, &usd(), 51.0),
            Err(SimError::LiquidityExhausted { .. })
        ));
        w.borrow(&a, &usd(), 50.0).unwrap();
        assert!(matches!(
            w.borrow(&a, &usd(), 1.0),
            Err(SimError::LiquidityExhausted { .. })
        ));
    }

    #[test]
    fn repay_then_withdraw_restores_market() {
        let (mut w, a) = world(1000.0, 0.8, 0.0);
        let before = w.market().unwrap().listing(&usd()).unwrap().clone();
        w.credit(&a, &tka(), 100.0).unwrap();
        w.deposit(&a, &tka(), 100.0).unwrap();
        w.borrow(&a, &usd(), 60.0).unwrap();
        assert!(matches!(
            w.withdraw(&a, &tka(), 100.0),
            Err(SimError::UnhealthyWithdraw { .. })
        ));
        assert!(matches!(w.repay(&a, &usd(), 61.0), Err(SimError::Overpay { .. })));
        w.repay(&a, &usd(), 60.0).unwrap();
        w.withdraw(&a, &tka(), 100.0).unwrap();
        assert_eq!(w.market().unwrap().listing(&usd()).unwrap(), &before);
        assert_eq!(w.balance(&a, &tka()), 100.0);
    }

    #[test]
    fn withdraw_limited_by_lent_out_cash() {
        let (mut w, a) = world(100.0, 0.8, 0.0);
        let b = AgentId::new("b");
        w.register_agent(b.clone()).unwrap();
        w.credit(&b, &tka(), 1000.0).unwrap();
        w.deposit(&b, &tka(), 1000.0).unwrap();
        w.borrow(&b, &usd(), 80.0).unwrap();
        assert!(matches!(
            w.withdraw(&"lender".into(), &usd(), 100.0),
            Err(SimError::LiquidityExhausted { .. })
        ));
        assert_eq!(w.max_withdraw(&"lender".into(), &usd()).unwrap(), 20.0);
        let _ = a;
    }

    #[test]
    fn zero_incentive_seizes_equal_value() {
        let (mut w, a) = world(10_000.0, 0.8, 0.0);
        let liq = AgentId::new("liquidator");
        w.register_agent(liq.clone()).unwrap();
        w.credit(&a, &tka(), 100.0).unwrap();
        w.deposit(&a, &tka(), 100.0).unwrap();
        w.borrow(&a, &usd(), 80.0).unwrap();
        assert_eq!(
            w.liquidate(&liq, &a, &usd(), 10.0, &tka(), RepaySource::Wallet),
            Err(SimError::TargetHealthy(a.clone()))
        );
        // crash the collateral price
        w.credit(&liq, &tka(), 1000.0).unwrap();
        w.execute_swap(&liq, &tka(), 1000.0).unwrap();
        assert!(!w.is_healthy(&a).unwrap());
        let p = w.price(&tka()).unwrap();
        w.credit(&liq, &usd(), 10.0).unwrap();
        let seized = w
            .liquidate(&liq, &a, &usd(), 10.0, &tka(), RepaySource::Wallet)
            .unwrap();
        assert_relative_eq!(seized * p, 10.0, max_relative = 1e-12);
        w.check_conservation(1e-12).unwrap();
    }

    #[test]
    fn incentive_lets_900_seize_1000() {
        let mut w = World::new();
        w.register_asset(usd(), AssetClass::Stable).unwrap();
        w.register_asset("yUSD".into(), AssetClass::InterestBearing).unwrap();
        w.set_price_source(usd(), PriceSource::Fixed(1.0)).unwrap();
        w.set_price_source("yUSD".into(), PriceSource::Fixed(1.0)).unwrap();
        w.install_market(
            LendingMarket::new(0.1)
                .unwrap()
                .list(usd(), CollateralRate::new(0.9).unwrap())
                .list("yUSD".into(), CollateralRate::new(0.9).unwrap()),
        )
        .unwrap();
        let (b, liq, lender) = (AgentId::new("b"), AgentId::new("liq"), AgentId::new("lender"));
        for x in [&b, &liq, &lender] {
            w.register_agent(x.clone()).unwrap();
        }
        w.credit(&lender, &"yUSD".into(), 2000.0).unwrap();
        w.deposit(&lender, &"yUSD".into(), 2000.0).unwrap();
        w.credit(&b, &usd(), 1000.0).unwrap();
        w.deposit(&b, &usd(), 1000.0).unwrap();
        w.borrow(&b, &"yUSD".into(), 900.0).unwrap();
        w.set_price_source("yUSD".into(), PriceSource::Fixed(2.0)).unwrap();
        w.credit(&liq, &"yUSD".into(), 450.0).unwrap();
        let seized = w
            .liquidate(&liq, &b, &"yUSD".into(), 450.0, &usd(), RepaySource::Wallet)
            .unwrap();
        assert_relative_eq!(seized, 1000.0, max_relative = 1e-12);
        assert_eq!(w.market().unwrap().collateral(&b, &usd()), 0.0);
        w.withdraw(&liq, &usd(), 1000.0).unwrap();
        assert_relative_eq!(w.balance(&liq, &usd()), 1000.0, max_relative = 1e-12);
        w.check_conservation(1e-12).unwrap();
    }

    #[test]
    fn bad_debt_measures_unhealthy_shortfall() {
        let (mut w, a) = world(10_000.0, 0.8, 0.0);
        assert_eq!(w.bad_debt().unwrap(), 0.0);
        w.credit(&a, &tka(), 100.0).unwrap();
        w.deposit(&a, &tka(), 100.0).unwrap();
        w.borrow(&a, &usd(), 80.0).unwrap();
        assert_eq!(w.bad_debt().unwrap(), 0.0);
        let dumper = AgentId::new("dumper");
        w.register_agent(dumper.clone()).unwrap();
        w.credit(&dumper, &tka(), 1000.0).unwrap();
        w.execute_swap(&dumper, &tka(), 1000.0).unwrap();
        let p = w.price(&tka()).unwrap();
        assert_relative_eq!(w.bad_debt().unwrap(), 80.0 - 100.0 * p, max_relative = 1e-12);
        // pump the price back well above the original level
        w.credit(&dumper, &usd(), 3000.0).unwrap();
        w.execute_swap(&dumper, &usd(), 3000.0).unwrap();
        assert_eq!(w.bad_debt().unwrap(), 0.0);
    }

    #[test]
    fn collateral_rate_range() {
        assert!(CollateralRate::new(1.5).is_err());
        assert!(CollateralRate::new(-0.1).is_err());
        assert!(CollateralRate::new(1.0).is_ok());
    }

    proptest! {
        #[test]
        fn borrow_repay_conserves(dep in 1.0..1e5f64, frac in 0.0..1.0f64) {
            let (mut w, a) = world(1e6, 0.8, 0.0);
            w.credit(&a, &tka(), dep).unwrap();
            w.deposit(&a, &tka(), dep).unwrap();
            let max = w.max_borrow(&a, &usd()).unwrap();
            w.borrow(&a, &usd(), max * frac).unwrap();
            prop_assert!(w.is_healthy(&a).unwrap());
            w.repay(&a, &usd(), max * frac).unwrap();
            w.withdraw(&a, &tka(), dep).unwrap();
            prop_assert!(w.check_conservation(1e-12).is_ok());
        }
    }
}
