//! Asset registry, agent balance ledger and conservation accounting.
//!
//! Every token in a [`World`] is held either by an agent wallet or by one of
//! the protocol components (pool reserves, lending-market cash, vault
//! underlying, flashloan liquidity). The world also tracks how much of each
//! asset has been issued, so that "total held == total issued" can be
//! checked after any sequence of operations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::amm::ConstantProductPool;
use crate::envservices::{FlashloanProvider, OraclePolicy};
use crate::error::{Result, SimError};
use crate::lending::LendingMarket;
use crate::vault::InterestBearingVault;

/// Relative slack tolerated when an operation spends an entire balance.
/// Shortfalls larger than this are errors, smaller ones clamp to zero.
pub const DUST: f64 = 1e-9;

/// Symbolic token identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AssetId(pub String);

/// Symbolic agent (address) identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub String);

impl AssetId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }
}

impl AgentId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }
}

impl fmt::Display for AssetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AssetId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

/// Asset classification. Metadata only: no operation dispatches on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetClass {
    Stable,
    Manipulated,
    InterestBearing,
    Underlying,
}

/// One world-mutating operation as recorded in the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    Credit {
        asset: AssetId,
        amount: f64,
    },
    Debit {
        asset: AssetId,
        amount: f64,
    },
    Transfer {
        to: AgentId,
        asset: AssetId,
        amount: f64,
    },
    Swap {
        pay_asset: AssetId,
        paid: f64,
        receive_asset: AssetId,
        received: f64,
    },
    Deposit {
        asset: AssetId,
        amount: f64,
    },
    Borrow {
        asset: AssetId,
        amount: f64,
    },
    Repay {
        asset: AssetId,
        amount: f64,
    },
    Withdraw {
        asset: AssetId,
        amount: f64,
    },
    Liquidate {
        target: AgentId,
        repay_asset: AssetId,
        repaid: f64,
        seize_asset: AssetId,
        seized: f64,
    },
    Mint {
        underlying: f64,
        shares: f64,
    },
    Redeem {
        shares: f64,
        underlying: f64,
    },
    Burn {
        shares: f64,
    },
    Donate {
        amount: f64,
        share_price: f64,
    },
    FlashBorrow {
        handle: u64,
        asset: AssetId,
        amount: f64,
    },
    FlashRepay {
        handle: u64,
        asset: AssetId,
        paid: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpRecord {
    pub step: u64,
    pub agent: AgentId,
    #[serde(flatten)]
    pub op: Op,
}

/// Held-vs-issued comparison for one asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetBalanceCheck {
    pub asset: AssetId,
    pub held: f64,
    pub issued: f64,
    pub rel_error: f64,
}

/// Complete simulation state. Cloning a world is how snapshots are taken.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct World {
    assets: BTreeMap<AssetId, AssetClass>,
    agents: BTreeSet<AgentId>,
    balances: BTreeMap<AgentId, BTreeMap<AssetId, f64>>,
    issued: BTreeMap<AssetId, f64>,
    pub(crate) pool: Option<ConstantProductPool>,
    pub(crate) market: Option<LendingMarket>,
    pub(crate) vault: Option<InterestBearingVault>,
    pub(crate) flash: Option<FlashloanProvider>,
    pub(crate) oracle: OraclePolicy,
    step: u64,
    trace: Vec<OpRecord>,
}

pub(crate) fn check_amount(amount: f64) -> Result<()> {
    if amount.is_finite() && amount >= 0.0 {
        Ok(())
    } else {
        Err(SimError::InvalidAmount(amount))
    }
}

/// True when `available` covers `amount` up to [`DUST`] relative slack.
pub(crate) fn covers(available: f64, amount: f64) -> bool {
    amount - available <= DUST * available.abs().max(amount.abs()).max(1.0)
}

impl World {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_asset(&mut self, id: AssetId, class: AssetClass) -> Result<()> {
        if self.assets.contains_key(&id) {
            return Err(SimError::DuplicateAsset(id));
        }
        self.issued.insert(id.clone(), 0.0);
        self.assets.insert(id, class);
        Ok(())
    }

    pub fn asset_class(&self, id: &AssetId) -> Option<AssetClass> {
        self.assets.get(id).copied()
    }

    pub fn assets(&self) -> impl Iterator<Item = (&AssetId, AssetClass)> {
        self.assets.iter().map(|(id, class)| (id, *class))
    }

    pub fn register_agent(&mut self, id: AgentId) -> Result<()> {
        if !self.agents.insert(id.clone()) {
            return Err(SimError::DuplicateAgent(id));
        }
        self.balances.insert(id, BTreeMap::new());
        Ok(())
    }

    /// Registers `id` unless it already exists.
    pub fn ensure_agent(&mut self, id: &AgentId) {
        if !self.agents.contains(id) {
            self.agents.insert(id.clone());
            self.balances.insert(id.clone(), BTreeMap::new());
        }
    }

    pub fn has_agent(&self, id: &AgentId) -> bool {
        self.agents.contains(id)
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentId> {
        self.agents.iter()
    }

    pub fn balance(&self, agent: &AgentId, asset: &AssetId) -> f64 {
        self.balances
            .get(agent)
            .and_then(|b| b.get(asset))
            .copied()
            .unwrap_or(0.0)
    }

    /// Non-zero wallet holdings of `agent`.
    pub fn holdings(&self, agent: &AgentId) -> BTreeMap<AssetId, f64> {
        self.balances
            .get(agent)
            .map(|b| {
                b.iter()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(k, v)| (k.clone(), *v))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Scenario seeding: mints `amount` of `asset` into the agent's wallet.
    pub fn credit(&mut self, agent: &AgentId, asset: &AssetId, amount: f64) -> Result<f64> {
        self.ensure_known(agent, asset)?;
        check_amount(amount)?;
        self.give(agent, asset, amount);
        *self.issued.get_mut(asset).expect("registered") += amount;
        self.record(
            agent,
            Op::Credit {
                asset: asset.clone(),
                amount,
            },
        );
        Ok(self.balance(agent, asset))
    }

    /// Scenario seeding: removes `amount` of `asset` from circulation.
    pub fn debit(&mut self, agent: &AgentId, asset: &AssetId, amount: f64) -> Result<f64> {
        self.ensure_known(agent, asset)?;
        check_amount(amount)?;
        let taken = self.take(agent, asset, amount)?;
        *self.issued.get_mut(asset).expect("registered") -= taken;
        self.record(
            agent,
            Op::Debit {
                asset: asset.clone(),
                amount: taken,
            },
        );
        Ok(self.balance(agent, asset))
    }

    /// Wallet-to-wallet transfer.
    pub fn transfer(&mut self, from: &AgentId, to: &AgentId, asset: &AssetId, amount: f64) -> Result<f64> {
        self.ensure_known(from, asset)?;
        self.ensure_known(to, asset)?;
        check_amount(amount)?;
        let moved = self.take(from, asset, amount)?;
        self.give(to, asset, moved);
        self.record(
            from,
            Op::Transfer {
                to: to.clone(),
                asset: asset.clone(),
                amount: moved,
            },
        );
        Ok(moved)
    }

    pub fn snapshot(&self) -> World {
        self.clone()
    }

    pub fn restore(&mut self, snapshot: &World) {
        *self = snapshot.clone();
    }

    /// Number of state-mutating operations applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn trace(&self) -> &[OpRecord] {
        &self.trace
    }

    pub fn issued(&self, asset: &AssetId) -> f64 {
        self.issued.get(asset).copied().unwrap_or(0.0)
    }

    /// Sum of `asset` over every wallet and protocol component.
    pub fn total_held(&self, asset: &AssetId) -> f64 {
        let wallets: f64 = self.balances.values().filter_map(|b| b.get(asset)).sum();
        let pool = self.pool.as_ref().map_or(0.0, |p| p.reserve_of(asset));
        let market = self.market.as_ref().map_or(0.0, |m| m.cash(asset));
        let vault = self.vault.as_ref().map_or(0.0, |v| v.holds(asset));
        let flash = self.flash.as_ref().map_or(0.0, |f| f.liquidity(asset));
        wallets + pool + market + vault + flash
    }

    pub fn conservation_report(&self) -> Vec<AssetBalanceCheck> {
        self.assets
            .keys()
            .map(|asset| {
                let held = self.total_held(asset);
                let issued = self.issued(asset);
                let scale = held.abs().max(issued.abs()).max(1.0);
                AssetBalanceCheck {
                    asset: asset.clone(),
                    held,
                    issued,
                    rel_error: (held - issued).abs() / scale,
                }
            })
            .collect()
    }

    /// Fails with the worst offending asset if any asset's held total
    /// deviates from its issued total by more than `rel_tol`.
    pub fn check_conservation(&self, rel_tol: f64) -> std::result::Result<(), AssetBalanceCheck> {
        let worst = self
            .conservation_report()
            .into_iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error));
        match worst {
            Some(check) if check.rel_error > rel_tol => Err(check),
            _ => Ok(()),
        }
    }

    pub fn pool(&self) -> Option<&ConstantProductPool> {
        self.pool.as_ref()
    }

    pub fn market(&self) -> Option<&LendingMarket> {
        self.market.as_ref()
    }

    pub fn vault(&self) -> Option<&InterestBearingVault> {
        self.vault.as_ref()
    }

    pub fn flashloans(&self) -> Option<&FlashloanProvider> {
        self.flash.as_ref()
    }

    pub fn oracle(&self) -> &OraclePolicy {
        &self.oracle
    }

    pub(crate) fn ensure_known(&self, agent: &AgentId, asset: &AssetId) -> Result<()> {
        if !self.agents.contains(agent) {
            return Err(SimError::UnknownAgent(agent.clone()));
        }
        self.ensure_asset(asset)
    }

    pub(crate) fn ensure_asset(&self, asset: &AssetId) -> Result<()> {
        if self.assets.contains_key(asset) {
            Ok(())
        } else {
            Err(SimError::UnknownAsset(asset.clone()))
        }
    }

    /// Removes up to `amount` from a wallet, clamping dust shortfalls.
    /// Returns the amount actually removed.
    pub(crate) fn take(&mut self, agent: &AgentId, asset: &AssetId, amount: f64) -> Result<f64> {
        let available = self.balance(agent, asset);
        if !covers(available, amount) {
            return Err(SimError::InsufficientBalance {
                agent: agent.clone(),
                asset: asset.clone(),
                needed: amount,
                available,
            });
        }
        let taken = amount.min(available);
        let slot = self
            .balances
            .entry(agent.clone())
            .or_default()
            .entry(asset.clone())
            .or_insert(0.0);
        *slot = (*slot - taken).max(0.0);
        Ok(taken)
    }

    pub(crate) fn give(&mut self, agent: &AgentId, asset: &AssetId, amount: f64) {
        *self
            .balances
            .entry(agent.clone())
            .or_default()
            .entry(asset.clone())
            .or_insert(0.0) += amount;
    }

    /// Adjusts the issued total for assets created or destroyed by a
    /// protocol (vault shares).
    pub(crate) fn adjust_issued(&mut self, asset: &AssetId, delta: f64) {
        *self.issued.entry(asset.clone()).or_insert(0.0) += delta;
    }

    pub(crate) fn record(&mut self, agent: &AgentId, op: Op) {
        self.step += 1;
        self.trace.push(OpRecord {
            step: self.step,
            agent: agent.clone(),
            op,
        });
    }
}
