//! Roles, actions, events and per-role gains.
//!
//! An [`Action`] is a run of world operations performed by one agent under
//! one [`Role`]. Its value delta for every agent is the wallet value after
//! the action (at post-action prices) minus the wallet value before it (at
//! pre-action prices), so deltas telescope over an [`Event`]. Lending
//! positions are not part of wallet value: an abandoned collateral deposit
//! shows up as a loss and an unpaid borrow as a gain.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::world::{AgentId, AssetId, Op, OpRecord, World};

/// Protocol roles. Codes 1 to 6 follow the usual taxonomy numbering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Lender = 1,
    Borrower = 2,
    Trader = 3,
    LiquidityProvider = 4,
    YieldFarmer = 5,
    YieldSource = 6,
    Liquidator = 7,
}

impl Role {
    pub const ALL: [Role; 7] = [
        Role::Lender,
        Role::Borrower,
        Role::Trader,
        Role::LiquidityProvider,
        Role::YieldFarmer,
        Role::YieldSource,
        Role::Liquidator,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Role> {
        Self::ALL.into_iter().find(|r| r.code() == code)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Role::Lender => "lender",
            Role::Borrower => "borrower",
            Role::Trader => "trader",
            Role::LiquidityProvider => "liquidity provider",
            Role::YieldFarmer => "yield farmer",
            Role::YieldSource => "yield source",
            Role::Liquidator => "liquidator",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub agent: AgentId,
    pub role: Role,
    pub label: String,
    pub ops: Vec<OpRecord>,
    /// Value change per agent, in stable units. Agents with no change are
    /// omitted.
    pub deltas: BTreeMap<AgentId, f64>,
}

impl Action {
    pub fn delta(&self, agent: &AgentId) -> f64 {
        self.deltas.get(agent).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Event {
    pub actions: Vec<Action>,
}

impl Event {
    pub fn op_count(&self) -> usize {
        self.actions.iter().map(|a| a.ops.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GainsLedger {
    /// Total gain per agent over the event.
    pub gains: BTreeMap<AgentId, f64>,
    /// Gain per agent split by the role of the action that produced it.
    pub by_role: BTreeMap<AgentId, BTreeMap<Role, f64>>,
}

impl GainsLedger {
    pub fn gain(&self, agent: &AgentId) -> f64 {
        self.gains.get(agent).copied().unwrap_or(0.0)
    }

    fn apply(&mut self, action: &Action) {
        for (agent, delta) in &action.deltas {
            *self.gains.entry(agent.clone()).or_insert(0.0) += delta;
            *self
                .by_role
                .entry(agent.clone())
                .or_default()
                .entry(action.role)
                .or_insert(0.0) += delta;
        }
    }
}

pub fn record_action(event: &mut Event, ledger: &mut GainsLedger, action: Action) {
    ledger.apply(&action);
    event.actions.push(action);
}

/// Sum of gains over the controlled agents. May be negative.
pub fn attacker_gain(ledger: &GainsLedger, controlled: &BTreeSet<AgentId>) -> f64 {
    controlled.iter().map(|a| ledger.gain(a)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleplayReport {
    pub roles: BTreeMap<AgentId, BTreeSet<Role>>,
    pub role_set: BTreeSet<Role>,
    pub distinct_roles: usize,
    pub multi_role: bool,
    pub attacker_gain: f64,
}

/// Collects the roles played by controlled agents and their total gain.
pub fn classify_roleplay(event: &Event, controlled: &BTreeSet<AgentId>) -> RoleplayReport {
    let mut roles: BTreeMap<AgentId, BTreeSet<Role>> = BTreeMap::new();
    let mut gain = 0.0;
    for action in &event.actions {
        if controlled.contains(&action.agent) {
            roles.entry(action.agent.clone()).or_default().insert(action.role);
        }
        gain += controlled.iter().map(|a| action.delta(a)).sum::<f64>();
    }
    let role_set: BTreeSet<Role> = roles.values().flatten().copied().collect();
    RoleplayReport {
        distinct_roles: role_set.len(),
        multi_role: role_set.len() >= 2,
        role_set,
        roles,
        attacker_gain: gain,
    }
}

fn wallet_values(world: &World, prices: &BTreeMap<AssetId, f64>) -> Result<BTreeMap<AgentId, f64>> {
    world
        .agents()
        .map(|a| Ok((a.clone(), world.wallet_value(a, prices)?)))
        .collect()
}

/// Wallet values at the prices seen at the end of the previous action.
#[derive(Debug, Clone, Default)]
struct ValueCache {
    prices: BTreeMap<AssetId, f64>,
    values: BTreeMap<AgentId, f64>,
    trace_len: usize,
}

/// Records actions against a live world as a strategy executes.
#[derive(Debug, Clone)]
pub struct EventRecorder {
    event: Event,
    ledger: GainsLedger,
    start_trace: usize,
    initial_prices: BTreeMap<AssetId, f64>,
    initial_wallets: BTreeMap<AgentId, BTreeMap<AssetId, f64>>,
    cache: ValueCache,
}

impl EventRecorder {
    pub fn new(world: &World) -> Result<Self> {
        let prices = world.prices()?;
        Ok(Self {
            event: Event::default(),
            ledger: GainsLedger::default(),
            start_trace: world.trace().len(),
            initial_wallets: world.agents().map(|a| (a.clone(), world.holdings(a))).collect(),
            cache: ValueCache {
                values: wallet_values(world, &prices)?,
                prices: prices.clone(),
                trace_len: world.trace().len(),
            },
            initial_prices: prices,
        })
    }

    /// Runs `body` as one action. Operations applied before a failure are
    /// still attributed to the action so the trace stays fully covered.
    pub fn act<T>(
        &mut self,
        world: &mut World,
        agent: &AgentId,
        role: Role,
        label: &str,
        body: impl FnOnce(&mut World) -> Result<T>,
    ) -> Result<T> {
        let before_prices = world.prices()?;
        if self.cache.trace_len != world.trace().len() || self.cache.prices != before_prices {
            self.cache.values = wallet_values(world, &before_prices)?;
            self.cache.prices = before_prices.clone();
        }
        let mark = world.trace().len();
        let out = body(world);
        let ops = world.trace()[mark..].to_vec();
        let after_prices = world.prices()?;

        // Wallets touched by an operation are revalued in full; every other
        // wallet only moves with the prices of what it holds.
        let mut touched = BTreeSet::new();
        for rec in &ops {
            touched.insert(rec.agent.clone());
            if let Op::Transfer { to, .. } = &rec.op {
                touched.insert(to.clone());
            }
        }
        let moved: Vec<(&AssetId, f64)> = after_prices
            .iter()
            .map(|(a, p1)| (a, p1 - before_prices.get(a).copied().unwrap_or(0.0)))
            .filter(|(_, dp)| *dp != 0.0)
            .collect();
        let mut deltas = BTreeMap::new();
        for a in &touched {
            let v1 = world.wallet_value(a, &after_prices)?;
            let v0 = self.cache.values.insert(a.clone(), v1).unwrap_or(0.0);
            if v1 != v0 {
                deltas.insert(a.clone(), v1 - v0);
            }
        }
        if !moved.is_empty() {
            for a in world.agents().filter(|a| !touched.contains(*a)) {
                let d: f64 = moved.iter().map(|(asset, dp)| world.balance(a, asset) * dp).sum();
                if d != 0.0 {
                    *self.cache.values.entry(a.clone()).or_insert(0.0) += d;
                    deltas.insert(a.clone(), d);
                }
            }
        }
        self.cache.prices = after_prices;
        self.cache.trace_len = world.trace().len();

        record_action(
            &mut self.event,
            &mut self.ledger,
            Action {
                agent: agent.clone(),
                role,
                label: label.to_owned(),
                ops,
                deltas,
            },
        );
        out
    }

    pub fn event(&self) -> &Event {
        &self.event
    }

    pub fn ledger(&self) -> &GainsLedger {
        &self.ledger
    }

    /// Trace operations since recording began that no action covers.
    pub fn unattributed(&self, world: &World) -> usize {
        (world.trace().len() - self.start_trace).saturating_sub(self.event.op_count())
    }

    pub fn initial_prices(&self) -> &BTreeMap<AssetId, f64> {
        &self.initial_prices
    }

    /// Final minus initial wallet of `agent`, valued at the pre-event
    /// prices. Unpriced assets are ignored.
    pub fn exit_value(&self, world: &World, agent: &AgentId) -> f64 {
        let empty = BTreeMap::new();
        let start = self.initial_wallets.get(agent).unwrap_or(&empty);
        let end = world.holdings(agent);
        let assets: BTreeSet<&AssetId> = start.keys().chain(end.keys()).collect();
        assets
            .into_iter()
            .map(|asset| {
                let p = self.initial_prices.get(asset).copied().unwrap_or(0.0);
                let diff = end.get(asset).copied().unwrap_or(0.0) - start.get(asset).copied().unwrap_or(0.0);
                p * diff
            })
            .sum()
    }

    pub fn into_parts(self) -> (Event, GainsLedger) {
        (self.event, self.ledger)
    }
}
