//! Interest-bearing vault: shares priced at underlying per share.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::world::{check_amount, AgentId, AssetId, Op, World};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterestBearingVault {
    pub share: AssetId,
    pub underlying: AssetId,
    supply: f64,
    underlying_balance: f64,
}

impl InterestBearingVault {
    pub fn new(share: AssetId, underlying: AssetId) -> Self {
        Self {
            share,
            underlying,
            supply: 0.0,
            underlying_balance: 0.0,
        }
    }

    pub fn supply(&self) -> f64 {
        self.supply
    }

    pub fn underlying_balance(&self) -> f64 {
        self.underlying_balance
    }

    /// Underlying per share. Undefined for an empty vault.
    pub fn share_price(&self) -> Result<f64> {
        if self.supply > 0.0 {
            Ok(self.underlying_balance / self.supply)
        } else {
            Err(SimError::EmptyVault)
        }
    }

    /// Amount of `asset` held by the vault itself.
    pub fn holds(&self, asset: &AssetId) -> f64 {
        if *asset == self.underlying {
            self.underlying_balance
        } else {
            0.0
        }
    }
}

impl World {
    /// Installs the vault with `shares` outstanding, all held by `holder`,
    /// backed by `underlying` units. Both sides count as scenario seeding.
    pub fn install_vault(
        &mut self,
        mut vault: InterestBearingVault,
        holder: &AgentId,
        shares: f64,
        underlying: f64,
    ) -> Result<()> {
        self.ensure_known(holder, &vault.share)?;
        self.ensure_asset(&vault.underlying)?;
        check_amount(shares)?;
        check_amount(underlying)?;
        if vault.share == vault.underlying {
            return Err(SimError::InvalidParameter(
                "vault share and underlying must differ".into(),
            ));
        }
        if shares == 0.0 && underlying > 0.0 {
            return Err(SimError::EmptyVault);
        }
        vault.supply = shares;
        vault.underlying_balance = underlying;
        self.adjust_issued(&vault.underlying, underlying);
        self.adjust_issued(&vault.share, shares);
        self.give(holder, &vault.share, shares);
        self.vault = Some(vault);
        Ok(())
    }

    fn vault_ids(&self) -> Result<(AssetId, AssetId)> {
        let v = self.vault.as_ref().ok_or(SimError::MissingComponent("vault"))?;
        Ok((v.share.clone(), v.underlying.clone()))
    }

    /// Deposits underlying and mints shares at the current price.
    pub fn mint(&mut self, agent: &AgentId, underlying_amt: f64) -> Result<f64> {
        let (share, underlying) = self.vault_ids()?;
        self.ensure_known(agent, &underlying)?;
        check_amount(underlying_amt)?;
        let vault = self.vault.as_ref().expect("checked");
        let price = if vault.supply > 0.0 { vault.share_price()? } else { 1.0 };
        let paid = self.take(agent, &underlying, underlying_amt)?;
        let shares = paid / price;
        let vault = self.vault.as_mut().expect("checked");
        vault.underlying_balance += paid;
        vault.supply += shares;
        self.give(agent, &share, shares);
        self.adjust_issued(&share, shares);
        self.record(
            agent,
            Op::Mint {
                underlying: paid,
                shares,
            },
        );
        Ok(shares)
    }

    /// Returns shares for their underlying value.
    pub fn redeem(&mut self, agent: &AgentId, shares: f64) -> Result<f64> {
        let (share, underlying) = self.vault_ids()?;
        self.ensure_known(agent, &share)?;
        check_amount(shares)?;
        let price = self.vault.as_ref().expect("checked").share_price()?;
        let burned = self.take(agent, &share, shares)?;
        let vault = self.vault.as_mut().expect("checked");
        let out = if burned >= vault.supply {
            vault.underlying_balance
        } else {
            (burned * price).min(vault.underlying_balance)
        };
        vault.supply = (vault.supply - burned).max(0.0);
        vault.underlying_balance -= out;
        self.adjust_issued(&share, -burned);
        self.give(agent, &underlying, out);
        self.record(
            agent,
            Op::Redeem {
                shares: burned,
                underlying: out,
            },
        );
        Ok(out)
    }

    /// Destroys shares without returning underlying.
    pub fn burn(&mut self, agent: &AgentId, shares: f64) -> Result<()> {
        let (share, _) = self.vault_ids()?;
        self.ensure_known(agent, &share)?;
        check_amount(shares)?;
        let burned = self.take(agent, &share, shares)?;
        let vault = self.vault.as_mut().expect("checked");
        vault.supply = (vault.supply - burned).max(0.0);
        self.adjust_issued(&share, -burned);
        self.record(agent, Op::Burn { shares: burned });
        Ok(())
    }

    /// Sends underlying straight to the vault. Supply is untouched, so the
    /// share price rises. Returns the new price.
    pub fn donate(&mut self, agent: &AgentId, underlying_amt: f64) -> Result<f64> {
        let (_, underlying) = self.vault_ids()?;
        self.ensure_known(agent, &underlying)?;
        check_amount(underlying_amt)?;
        if self.vault.as_ref().expect("checked").supply <= 0.0 {
            return Err(SimError::EmptyVault);
        }
        let paid = self.take(agent, &underlying, underlying_amt)?;
        let vault = self.vault.as_mut().expect("checked");
        vault.underlying_balance += paid;
        let share_price = vault.share_price()?;
        self.record(
            agent,
            Op::Donate {
                amount: paid,
                share_price,
            },
        );
        Ok(share_price)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::AssetClass;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn world(supply: f64, underlying: f64) -> (World, AgentId) {
        let mut w = World::new();
        w.register_asset("USD".into(), AssetClass::Underlying).unwrap();
        w.register_asset("yUSD".into(), AssetClass::InterestBearing).unwrap();
        let holders = AgentId::new("holders");
        let a = AgentId::new("a");
        w.register_agent(holders.clone()).unwrap();
        w.register_agent(a.clone()).unwrap();
        w.install_vault(
            InterestBearingVault::new("yUSD".into(), "USD".into()),
            &holders,
            supply,
            underlying,
        )
        .unwrap();
        w.credit(&a, &"USD".into(), 10_000.0).unwrap();
        (w, a)
    }

    fn price(w: &World) -> f64 {
        w.vault().unwrap().share_price().unwrap()
    }

    #[test]
    fn mint_at_unit_and_higher_price() {
        let (mut w, a) = world(1000.0, 1000.0);
        assert_eq!(w.mint(&a, 100.0).unwrap(), 100.0);
        assert_eq!(w.mint(&a, 0.0).unwrap(), 0.0);

        let (mut w, a) = world(1000.0, 1500.0);
        assert_relative_eq!(w.mint(&a, 150.0).unwrap(), 100.0, max_relative = 1e-12);
        assert_relative_eq!(price(&w), 1.5, max_relative = 1e-12);
        w.check_conservation(1e-12).unwrap();
    }

    #[test]
    fn redeem_inverts_mint() {
        let (mut w, a) = world(1000.0, 1000.0);
        let shares = w.mint(&a, 100.0).unwrap();
        assert_relative_eq!(w.redeem(&a, shares).unwrap(), 100.0, max_relative = 1e-12);
        assert_relative_eq!(w.balance(&a, &"USD".into()), 10_000.0, max_relative = 1e-12);
        assert!(matches!(w.redeem(&a, 1.0), Err(SimError::InsufficientBalance { .. })));
    }

    #[test]
    fn burn_raises_price() {
        let (mut w, _) = world(1000.0, 1000.0);
        let holders = AgentId::new("holders");
        w.burn(&holders, 400.0).unwrap();
        assert_relative_eq!(price(&w), 1000.0 / 600.0, max_relative = 1e-12);
        w.burn(&holders, 0.0).unwrap();
        assert_relative_eq!(price(&w), 1000.0 / 600.0, max_relative = 1e-12);
        w.check_conservation(1e-12).unwrap();
    }

    #[test]
    fn donation_scales_price_by_epsilon() {
        let (mut w, a) = world(600.0, 600.0);
        assert_eq!(w.donate(&a, 0.0).unwrap(), 1.0);
        let before = price(&w);
        let after = w.donate(&a, 300.0).unwrap();
        // ε = 1 + donate / (supply - borrowable), with supply 1000 and 400 borrowable
        assert_relative_eq!(after / before, 1.0 + 300.0 / (1000.0 - 400.0), max_relative = 1e-12);
        assert_eq!(w.vault().unwrap().supply(), 600.0);

        let (mut w, a) = world(600.0, 600.0);
        assert_relative_eq!(w.donate(&a, 600.0).unwrap(), 2.0, max_relative = 1e-12);
        w.check_conservation(1e-12).unwrap();
    }

    #[test]
    fn empty_vault_has_no_price() {
        let mut w = World::new();
        w.register_asset("USD".into(), AssetClass::Underlying).unwrap();
        w.register_asset("yUSD".into(), AssetClass::InterestBearing).unwrap();
        let a = AgentId::new("a");
        w.register_agent(a.clone()).unwrap();
        w.install_vault(InterestBearingVault::new("yUSD".into(), "USD".into()), &a, 0.0, 0.0)
            .unwrap();
        assert_eq!(w.vault().unwrap().share_price(), Err(SimError::EmptyVault));
        w.credit(&a, &"USD".into(), 10.0).unwrap();
        assert_eq!(w.donate(&a, 1.0), Err(SimError::EmptyVault));
        assert_eq!(w.mint(&a, 10.0).unwrap(), 10.0);
    }

    proptest! {
        #[test]
        fn mint_redeem_round_trip_preserves_price(
            supply in 1.0..1e6f64,
            ratio in 0.2..5.0f64,
            amt in 0.0..10_000.0f64,
        ) {
            let (mut w, a) = world(supply, supply * ratio);
            let p0 = price(&w);
            let shares = w.mint(&a, amt).unwrap();
            prop_assert!((price(&w) - p0).abs() <= 1e-12 * p0);
            let back = w.redeem(&a, shares).unwrap();
            prop_assert!((price(&w) - p0).abs() <= 1e-12 * p0);
            prop_assert!((back - amt).abs() <= 1e-12 * amt.max(1.0));
            prop_assert!(w.check_conservation(1e-12).is_ok());
        }

        #[test]
        fn donate_never_mints(supply in 1.0..1e6f64, amt in 0.0..10_000.0f64) {
            let (mut w, a) = world(supply, supply);
            w.donate(&a, amt).unwrap();
            prop_assert_eq!(w.vault().unwrap().supply(), supply);
        }
    }
}
