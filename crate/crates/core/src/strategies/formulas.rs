//! Closed-form profit expressions for both attack families.
//!
//! All expressions assume a fee-free pool, a stable asset priced at 1 and,
//! for B&D, a vault whose share price is 1 before the attack.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

fn require(cond: bool, msg: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(SimError::InvalidParameter(msg.into()))
    }
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    require(v > 0.0 && v <= 1.0, format!("{name} must lie in (0, 1], got {v}"))
}

/// Collateral value per round for a purchase of `x` against reserve `r`:
/// the bought amount valued at the post-swap spot price, `x (1 + x / r)`.
pub fn bought_collateral_value(x: f64, r: f64) -> f64 {
    x * (1.0 + x / r)
}

/// Purchase size whose collateral, at collateral rate `cr`, exactly covers
/// a borrow of `target`: the positive root of `cr x (1 + x / r) = target`.
pub fn purchase_for_borrow(target: f64, cr: f64, r: f64) -> f64 {
    if target <= 0.0 {
        return 0.0;
    }
    let q = 4.0 * target / (cr * r);
    // (sqrt(1 + q) - 1) without cancellation for small q
    r / 2.0 * q / ((1.0 + q).sqrt() + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BbSingleOptimum {
    pub out_s: f64,
    pub profit: f64,
    pub feasible: bool,
}

/// Optimal single-round B&B purchase and profit for a symmetric pool of
/// depth `l0` and a market holding `init_s` stable.
pub fn bb_single_formula(init_s: f64, cr_m: f64, l0: f64) -> Result<BbSingleOptimum> {
    require(init_s >= 0.0 && init_s.is_finite(), "init_s must be non-negative")?;
    require(l0 > 0.0 && l0.is_finite(), "pool depth must be positive")?;
    check_rate("CR_m", cr_m)?;
    // profitable iff the market can lend more than l0 (1/cr - 1)
    if init_s <= l0 * (1.0 / cr_m - 1.0) {
        return Ok(BbSingleOptimum {
            out_s: 0.0,
            profit: 0.0,
            feasible: false,
        });
    }
    let out_s = purchase_for_borrow(init_s, cr_m, l0);
    Ok(BbSingleOptimum {
        out_s,
        profit: init_s - out_s,
        feasible: true,
    })
}

/// Single-round profit at an arbitrary purchase size: borrow is capped by
/// both collateral capacity and market liquidity.
pub fn bb_single_profit_at(out_s: f64, init_s: f64, cr_m: f64, l0: f64) -> f64 {
    (cr_m * bought_collateral_value(out_s, l0)).min(init_s) - out_s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BbMultiBound {
    /// Upper bound on the stable assets left in the market.
    pub residual_bound: f64,
    /// Total profit when the residual sits exactly at the bound.
    pub profit_at_bound: f64,
}

/// Residual bound and total profit of the alternating multi-round attack.
pub fn bb_multi_formula(init_s: f64, init_m: f64, cr_m: f64, l0: f64) -> Result<BbMultiBound> {
    require(init_s >= 0.0 && init_m >= 0.0, "market balances must be non-negative")?;
    require(l0 > 0.0, "pool depth must be positive")?;
    check_rate("CR_m", cr_m)?;
    let residual_bound = (cr_m - 3.0 + 2.0 / cr_m) * l0 / (1.0 + init_m / l0);
    Ok(BbMultiBound {
        residual_bound,
        profit_at_bound: multi_profit_with_residual(init_s, init_m, l0, residual_bound),
    })
}

/// Total multi-round profit for a given stable residual, assuming every
/// manipulated asset the market held ends up sold into the pool.
pub fn multi_profit_with_residual(init_s: f64, init_m: f64, l0: f64, residual: f64) -> f64 {
    init_s + init_m / (1.0 + init_m / l0) - residual
}

/// Exact accounting identity for the multi-round attack on a pool with
/// initial reserves `(rs, rm)`: whatever stable left the market plus the
/// stable the pool released when `init_m - m_left` manipulated units were
/// sold into it. Flashloan and pool fees are not included.
pub fn multi_profit_identity(init_s: f64, init_m: f64, rs: f64, rm: f64, s_left: f64, m_left: f64) -> f64 {
    let sold = init_m - m_left;
    init_s - s_left + rs * sold / (rm + sold)
}

/// Market and vault state the B&D expressions depend on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BdInputs {
    /// Share supply of the interest-bearing token.
    pub supply_ib: f64,
    /// Interest-bearing tokens the market can lend.
    pub borrowable_ib: f64,
    /// Stable assets the market can lend.
    pub borrowable_s: f64,
    pub cr_s: f64,
    pub cr_ib: f64,
    pub liq_incentive: f64,
    pub flash_fee: f64,
}

impl BdInputs {
    pub fn validate(&self) -> Result<()> {
        require(
            self.supply_ib >= 0.0 && self.borrowable_ib >= 0.0 && self.borrowable_s >= 0.0,
            "balances must be non-negative",
        )?;
        check_rate("CR_s", self.cr_s)?;
        check_rate("CR_IB", self.cr_ib)?;
        require(
            (0.0..1.0).contains(&self.liq_incentive),
            "liquidation incentive must lie in [0, 1)",
        )?;
        require((0.0..1.0).contains(&self.flash_fee), "flash fee must lie in [0, 1)")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BdClosedForm {
    /// Share-price amplification from the donation.
    pub epsilon: f64,
    pub collateral_b: f64,
    pub donate: f64,
    pub flash_total: f64,
    pub profit: f64,
}

/// Closed-form B&D outcome for `iter` mint/borrow iterations seeded with
/// `init_mint`. `enhanced` selects the drain-then-liquidate ordering.
pub fn bd_formula(inputs: &BdInputs, iter: u32, init_mint: f64, enhanced: bool) -> Result<BdClosedForm> {
    inputs.validate()?;
    require(iter >= 1, "iter must be at least 1")?;
    require(
        init_mint >= 0.0 && init_mint.is_finite(),
        "init_mint must be non-negative",
    )?;
    let BdInputs {
        supply_ib: s,
        borrowable_ib: b_ib,
        borrowable_s: b_s,
        cr_s,
        cr_ib,
        liq_incentive: liq,
        flash_fee: fee,
    } = *inputs;
    let it = f64::from(iter);
    // total interest-bearing debt of B and the deposit A keeps after withdrawing
    let borrowed_ib = it * (b_ib + init_mint);
    let kept = init_mint + (it - 1.0) * (b_ib + init_mint);
    let float = s - b_ib;
    if float <= 0.0 {
        return Err(SimError::Infeasible(
            "no share supply outside the market: donation cannot move the price".into(),
        ));
    }
    if kept <= 0.0 {
        return Err(SimError::Infeasible(
            "attacker keeps no interest-bearing collateral".into(),
        ));
    }
    let (collateral_b, epsilon) = if enhanced {
        let c = (borrowed_ib + b_s) / cr_s;
        (c, c * (1.0 - liq) / kept)
    } else {
        let c = borrowed_ib / cr_s;
        (c, (b_s + c) / (cr_ib * kept))
    };
    if epsilon < 1.0 {
        return Err(SimError::Infeasible(format!(
            "required amplification {epsilon} is below 1"
        )));
    }
    let donate = (epsilon - 1.0) * float;
    let flash_total = init_mint + collateral_b + donate;
    let profit = b_s + collateral_b + b_ib + init_mint - flash_total / (1.0 - fee);
    Ok(BdClosedForm {
        epsilon,
        collateral_b,
        donate,
        flash_total,
        profit,
    })
}

/// Share-price amplification produced by donating `donate` once the
/// attacker has withdrawn and redeemed every lendable share.
pub fn donation_epsilon(supply_ib: f64, borrowable_ib: f64, donate: f64) -> Result<f64> {
    let float = supply_ib - borrowable_ib;
    if float <= 0.0 {
        return Err(SimError::Infeasible("donation denominator is not positive".into()));
    }
    Ok(1.0 + donate / float)
}
