//! Uniswap-V2-style constant-product pool between a stable asset and a
//! manipulated asset.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::world::{check_amount, AgentId, AssetId, Op, World};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantProductPool {
    pub stable: AssetId,
    pub manipulated: AssetId,
    reserve_s: f64,
    reserve_m: f64,
    /// Fraction of the input withheld as fee. Zero for every closed-form check.
    pub fee: f64,
}

impl ConstantProductPool {
    pub fn new(stable: AssetId, manipulated: AssetId, reserve_s: f64, reserve_m: f64, fee: f64) -> Result<Self> {
        if !(reserve_s > 0.0 && reserve_s.is_finite() && reserve_m > 0.0 && reserve_m.is_finite()) {
            return Err(SimError::InvalidParameter(format!(
                "pool reserves must be positive, got ({reserve_s}, {reserve_m})"
            )));
        }
        if !(0.0..1.0).contains(&fee) {
            return Err(SimError::InvalidParameter(format!(
                "pool fee must lie in [0, 1), got {fee}"
            )));
        }
        Ok(Self {
            stable,
            manipulated,
            reserve_s,
            reserve_m,
            fee,
        })
    }

    /// Fee-free pool holding `l0` of each side (initial price 1).
    pub fn symmetric(stable: AssetId, manipulated: AssetId, l0: f64) -> Result<Self> {
        Self::new(stable, manipulated, l0, l0, 0.0)
    }

    pub fn reserve_s(&self) -> f64 {
        self.reserve_s
    }

    pub fn reserve_m(&self) -> f64 {
        self.reserve_m
    }

    pub fn reserve_of(&self, asset: &AssetId) -> f64 {
        if *asset == self.stable {
            self.reserve_s
        } else if *asset == self.manipulated {
            self.reserve_m
        } else {
            0.0
        }
    }

    pub fn other_side(&self, asset: &AssetId) -> Result<&AssetId> {
        if *asset == self.stable {
            Ok(&self.manipulated)
        } else if *asset == self.manipulated {
            Ok(&self.stable)
        } else {
            Err(SimError::NotPoolAsset(asset.clone()))
        }
    }

    /// Manipulated tokens received for paying `out_s` stable tokens.
    pub fn quote_swap_in(&self, out_s: f64) -> f64 {
        self.quote_raw(self.reserve_s, self.reserve_m, out_s)
    }

    /// Amount of the opposite asset received for paying `amount` of `pay_asset`.
    pub fn quote(&self, pay_asset: &AssetId, amount: f64) -> Result<f64> {
        check_amount(amount)?;
        let (r_in, r_out) = self.reserves_for(pay_asset)?;
        Ok(self.quote_raw(r_in, r_out, amount))
    }

    /// Spot price of the manipulated asset in stable units.
    pub fn spot_price_m(&self) -> f64 {
        self.reserve_s / self.reserve_m
    }

    pub fn product(&self) -> f64 {
        self.reserve_s * self.reserve_m
    }

    fn reserves_for(&self, pay_asset: &AssetId) -> Result<(f64, f64)> {
        if *pay_asset == self.stable {
            Ok((self.reserve_s, self.reserve_m))
        } else if *pay_asset == self.manipulated {
            Ok((self.reserve_m, self.reserve_s))
        } else {
            Err(SimError::NotPoolAsset(pay_asset.clone()))
        }
    }

    fn quote_raw(&self, r_in: f64, r_out: f64, amount: f64) -> f64 {
        let effective = amount * (1.0 - self.fee);
        r_out * effective / (r_in + effective)
    }

    /// Applies a swap to the reserves and returns the received amount.
    fn apply(&mut self, pay_asset: &AssetId, amount: f64) -> Result<f64> {
        let (r_in, r_out) = self.reserves_for(pay_asset)?;
        let received = self.quote_raw(r_in, r_out, amount);
        if *pay_asset == self.stable {
            self.reserve_s += amount;
            self.reserve_m -= received;
        } else {
            self.reserve_m += amount;
            self.reserve_s -= received;
        }
        Ok(received)
    }
}

impl World {
    /// Installs the pool. Its reserves are issued as scenario seeding.
    pub fn install_pool(&mut self, pool: ConstantProductPool) -> Result<()> {
        self.ensure_asset(&pool.stable)?;
        self.ensure_asset(&pool.manipulated)?;
        self.adjust_issued(&pool.stable, pool.reserve_s);
        self.adjust_issued(&pool.manipulated, pool.reserve_m);
        self.pool = Some(pool);
        Ok(())
    }

    /// Swaps `amount` of `pay_asset` from the trader's wallet for the other
    /// pool asset. Works in both directions.
    pub fn execute_swap(&mut self, trader: &AgentId, pay_asset: &AssetId, amount: f64) -> Result<f64> {
        self.ensure_known(trader, pay_asset)?;
        check_amount(amount)?;
        let receive_asset = self
            .pool
            .as_ref()
            .ok_or(SimError::MissingComponent("pool"))?
            .other_side(pay_asset)?
            .clone();
        let paid = self.take(trader, pay_asset, amount)?;
        let received = self.pool.as_mut().expect("checked above").apply(pay_asset, paid)?;
        self.give(trader, &receive_asset, received);
        self.record(
            trader,
            Op::Swap {
                pay_asset: pay_asset.clone(),
                paid,
                receive_asset,
                received,
            },
        );
        Ok(received)
    }

    pub fn spot_price_m(&self) -> Result<f64> {
        Ok(self
            .pool
            .as_ref()
            .ok_or(SimError::MissingComponent("pool"))?
            .spot_price_m())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::AssetClass;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn setup(l0: f64) -> (World, AgentId) {
        let mut w = World::new();
        w.register_asset("USD".into(), AssetClass::Stable).unwrap();
        w.register_asset("TKA".into(), AssetClass::Manipulated).unwrap();
        w.install_pool(ConstantProductPool::symmetric("USD".into(), "TKA".into(), l0).unwrap())
            .unwrap();
        let t = AgentId::new("trader");
        w.register_agent(t.clone()).unwrap();
        w.credit(&t, &"USD".into(), 1e9).unwrap();
        (w, t)
    }

    #[test]
    fn quote_matches_constant_product_solution() {
        let pool = ConstantProductPool::symmetric("USD".into(), "TKA".into(), 1000.0).unwrap();
        assert_eq!(pool.quote_swap_in(0.0), 0.0);
        // (1000 - x)(1000 + 100) = 1e6
        let oracle = 1000.0 - 1e6 / 1100.0;
        assert_relative_eq!(pool.quote_swap_in(100.0), oracle, max_relative = 1e-14);
        assert_relative_eq!(pool.quote_swap_in(100.0), 90.909_090_909_090_9, max_relative = 1e-12);
        let huge = pool.quote_swap_in(1e15);
        assert!(huge < 1000.0 && huge > 999.999);
    }

    #[test]
    fn swap_updates_reserves_and_price() {
        let (mut w, t) = setup(1000.0);
        assert_eq!(w.spot_price_m().unwrap(), 1.0);
        assert_eq!(w.execute_swap(&t, &"USD".into(), 0.0).unwrap(), 0.0);
        assert_eq!(w.pool().unwrap().reserve_s(), 1000.0);

        let got = w.execute_swap(&t, &"USD".into(), 100.0).unwrap();
        assert_relative_eq!(got, 1000.0 / 11.0, max_relative = 1e-12);
        let pool = w.pool().unwrap();
        assert_eq!(pool.reserve_s(), 1100.0);
        assert_relative_eq!(pool.reserve_m(), 1e6 / 1100.0, max_relative = 1e-12);
        assert_relative_eq!(pool.spot_price_m(), 1.21, max_relative = 1e-12);
        assert_relative_eq!(w.balance(&t, &"TKA".into()), got);
    }

    #[test]
    fn price_after_full_reserve_swap_is_four() {
        let (mut w, t) = setup(1000.0);
        w.execute_swap(&t, &"USD".into(), 1000.0).unwrap();
        assert_relative_eq!(w.spot_price_m().unwrap(), 4.0, max_relative = 1e-12);
    }

    #[test]
    fn zero_fee_round_trip_returns_original() {
        let (mut w, t) = setup(1000.0);
        let got = w.execute_swap(&t, &"USD".into(), 250.0).unwrap();
        let back = w.execute_swap(&t, &"TKA".into(), got).unwrap();
        assert_relative_eq!(back, 250.0, max_relative = 1e-12);
        assert_relative_eq!(w.pool().unwrap().reserve_s(), 1000.0, max_relative = 1e-12);
    }

    #[test]
    fn insufficient_balance_and_foreign_asset() {
        let (mut w, t) = setup(1000.0);
        assert!(matches!(
            w.execute_swap(&t, &"TKA".into(), 1.0),
            Err(SimError::InsufficientBalance { .. })
        ));
        w.register_asset("ETH".into(), AssetClass::Stable).unwrap();
        w.credit(&t, &"ETH".into(), 1.0).unwrap();
        assert_eq!(
            w.execute_swap(&t, &"ETH".into(), 1.0),
            Err(SimError::NotPoolAsset("ETH".into()))
        );
    }

    #[test]
    fn fee_reduces_output_and_grows_product() {
        let mut pool = ConstantProductPool::new("USD".into(), "TKA".into(), 1000.0, 1000.0, 0.003).unwrap();
        let k0 = pool.product();
        let got = pool.apply(&"USD".into(), 100.0).unwrap();
        assert!(got < 1000.0 / 11.0);
        assert!(pool.product() > k0);
    }

    proptest! {
        #[test]
        fn price_follows_square_law(l0 in 1.0f64..1e7, frac in 0.0f64..20.0) {
            let out_s = l0 * frac;
            let (mut w, t) = setup(l0);
            w.credit(&t, &"USD".into(), out_s).unwrap();
            w.execute_swap(&t, &"USD".into(), out_s).unwrap();
            let expected = (1.0 + out_s / l0).powi(2);
            let got = w.spot_price_m().unwrap();
            prop_assert!(((got - expected) / expected).abs() <= 1e-12);
        }

        #[test]
        fn product_is_invariant(l0 in 1.0f64..1e6, a in 0.0f64..1e6, b in 0.0f64..1.0) {
            let (mut w, t) = setup(l0);
            let k0 = w.pool().unwrap().product();
            let got = w.execute_swap(&t, &"USD".into(), a).unwrap();
            w.execute_swap(&t, &"TKA".into(), got * b).unwrap();
            let k1 = w.pool().unwrap().product();
            prop_assert!(((k1 - k0) / k0).abs() <= 1e-12);
            prop_assert!(w.pool().unwrap().reserve_m() > 0.0);
        }

        #[test]
        fn split_swaps_are_path_independent(l0 in 1.0f64..1e6, total in 0.0f64..1e6, split in 0.0f64..1.0) {
            let (mut one, t) = setup(l0);
            one.execute_swap(&t, &"USD".into(), total).unwrap();
            let (mut two, t2) = setup(l0);
            two.execute_swap(&t2, &"USD".into(), total * split).unwrap();
            two.execute_swap(&t2, &"USD".into(), total * (1.0 - split)).unwrap();
            let (p1, p2) = (one.pool().unwrap(), two.pool().unwrap());
            prop_assert!(((p1.reserve_m() - p2.reserve_m()) / p1.reserve_m()).abs() <= 1e-12);
            prop_assert!(((p1.reserve_s() - p2.reserve_s()) / p1.reserve_s()).abs() <= 1e-12);
        }

        #[test]
        fn price_increases_with_stable_inflow(l0 in 1.0f64..1e6, a in 1e-3f64..1e5, b in 1e-3f64..1e5) {
            let (mut w, t) = setup(l0);
            w.execute_swap(&t, &"USD".into(), a).unwrap();
            let p1 = w.spot_price_m().unwrap();
            w.execute_swap(&t, &"USD".into(), b).unwrap();
            prop_assert!(w.spot_price_m().unwrap() > p1);
        }
    }
}
