//! Executable attack strategies and their closed-form counterparts.
//!
//! Every run works on a private copy of the scenario world, records each
//! step as a role-tagged action, and reports the attacker's exit value next
//! to the closed-form prediction.

mod bb;
mod bd;
pub mod formulas;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::roleplay::{attacker_gain, classify_roleplay, Action, EventRecorder, GainsLedger, Role, RoleplayReport};
use crate::world::{AgentId, AssetId, World};

pub use bb::{bb_multi_run, bb_single_run, BbInputs, DEFAULT_MAX_ROUNDS};
pub use bd::{bd_enhanced_run, bd_inputs, bd_primitive_run, BdParams, DEFAULT_MAX_ITER};
pub use formulas::{bb_multi_formula, bb_single_formula, bd_formula, BdClosedForm, BdInputs};

/// Agent that executes (and collects the proceeds of) every attack.
pub const ATTACKER: &str = "attacker";
/// Second controlled contract in the borrow-and-donate choreography.
pub const ACCOMPLICE: &str = "attacker_b";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "bb")]
    BorrowBuy,
    #[serde(rename = "bb-multi")]
    BorrowBuyMulti,
    #[serde(rename = "bd")]
    BorrowDonate,
    #[serde(rename = "bd-enhanced")]
    BorrowDonateEnhanced,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::BorrowBuy,
        StrategyKind::BorrowBuyMulti,
        StrategyKind::BorrowDonate,
        StrategyKind::BorrowDonateEnhanced,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::BorrowBuy => "bb",
            StrategyKind::BorrowBuyMulti => "bb-multi",
            StrategyKind::BorrowDonate => "bd",
            StrategyKind::BorrowDonateEnhanced => "bd-enhanced",
        }
    }

    pub fn is_borrow_buy(self) -> bool {
        matches!(self, StrategyKind::BorrowBuy | StrategyKind::BorrowBuyMulti)
    }

    /// Parameter keys accepted by `run`.
    pub fn param_keys(self) -> &'static [&'static str] {
        match self {
            StrategyKind::BorrowBuy => &["out_s"],
            StrategyKind::BorrowBuyMulti => &["rounds"],
            StrategyKind::BorrowDonate | StrategyKind::BorrowDonateEnhanced => {
                &["iter", "init_mint", "collateral_b", "donate", "max_iter"]
            }
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SimError::InvalidParameter(format!("unknown strategy `{s}`")))
    }
}

/// Named numeric strategy parameters, as given on the command line.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StrategyParams(pub BTreeMap<String, f64>);

impl StrategyParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.0.insert(key.to_owned(), value);
        self
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.0.get(key).copied()
    }

    /// Parses `key=value`.
    pub fn parse_pair(pair: &str) -> Result<(String, f64)> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| SimError::InvalidParameter(format!("expected key=value, got `{pair}`")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| SimError::InvalidParameter(format!("`{k}` is not a number: `{v}`")))?;
        if !v.is_finite() {
            return Err(SimError::InvalidParameter(format!("`{k}` must be finite")));
        }
        Ok((k.trim().to_owned(), v))
    }

    pub fn ensure_keys(&self, allowed: &[&str]) -> Result<()> {
        match self.0.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(SimError::InvalidParameter(format!(
                "unknown parameter `{k}` (expected one of: {})",
                allowed.join(", ")
            ))),
            None => Ok(()),
        }
    }

    /// Overlays `other` on top of `self`.
    pub fn merged(&self, other: &StrategyParams) -> StrategyParams {
        let mut out = self.clone();
        out.0.extend(other.0.iter().map(|(k, v)| (k.clone(), *v)));
        out
    }

    fn non_negative(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            Some(v) if v < 0.0 || !v.is_finite() => Err(SimError::InvalidParameter(format!(
                "`{key}` must be non-negative, got {v}"
            ))),
            other => Ok(other),
        }
    }

    fn count(&self, key: &str) -> Result<Option<u32>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) if v >= 1.0 && v.fract() == 0.0 && v <= f64::from(u32::MAX) => Ok(Some(v as u32)),
            Some(v) => Err(SimError::InvalidParameter(format!(
                "`{key}` must be a positive integer, got {v}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeasibilityFlags {
    /// The attack gained more than it spent.
    pub profitable: bool,
    /// Some borrow was truncated by market liquidity rather than capacity.
    pub liquidity_capped: bool,
    pub flash_repaid: bool,
    /// Multi-round only: the stable residual respects the analytic bound.
    pub residual_within_bound: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolState {
    pub reserve_s: f64,
    pub reserve_m: f64,
    pub spot_price_m: f64,
}

/// Protocol state left behind by the attack.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResidualState {
    pub market_cash: BTreeMap<AssetId, f64>,
    pub pool: Option<PoolState>,
    pub share_price: Option<f64>,
    pub bad_debt: f64,
}

impl ResidualState {
    fn capture(world: &World) -> Self {
        let market_cash = world
            .market()
            .map(|m| m.listed().map(|a| (a.clone(), m.cash(a))).collect())
            .unwrap_or_default();
        let pool = world.pool().map(|p| PoolState {
            reserve_s: p.reserve_s(),
            reserve_m: p.reserve_m(),
            spot_price_m: p.spot_price_m(),
        });
        Self {
            market_cash,
            pool,
            share_price: world.vault().and_then(|v| v.share_price().ok()),
            bad_debt: world.bad_debt().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub strategy: StrategyKind,
    /// The run completed and every flashloan was repaid.
    pub feasible: bool,
    pub failure: Option<String>,
    /// Exit value over all controlled agents, net of unpaid flashloans.
    pub simulated_profit: f64,
    pub closed_form_profit: Option<f64>,
    /// `|simulated - closed_form| / max(1, |closed_form|)`.
    pub rel_deviation: Option<f64>,
    /// Sum of per-action gains over the controlled agents.
    pub attacker_gain: f64,
    pub unpaid_flash: f64,
    pub exit_values: BTreeMap<AgentId, f64>,
    pub flags: FeasibilityFlags,
    pub metrics: BTreeMap<String, f64>,
    pub roleplay: RoleplayReport,
    pub ledger: GainsLedger,
    pub residual: ResidualState,
    pub actions: Vec<Action>,
}

impl AttackReport {
    pub fn metric(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }

    pub fn roles(&self) -> &BTreeSet<Role> {
        &self.roleplay.role_set
    }
}

/// A finished run: the report plus the final world, kept for inspection.
#[derive(Debug, Clone)]
pub struct Execution {
    pub report: AttackReport,
    pub world: World,
}

pub(crate) struct Run {
    pub world: World,
    pub rec: EventRecorder,
    pub attacker: AgentId,
    pub controlled: BTreeSet<AgentId>,
    pub metrics: BTreeMap<String, f64>,
    pub flags: FeasibilityFlags,
}

impl Run {
    pub fn new(world: &World) -> Result<Self> {
        let mut world = world.clone();
        let attacker = AgentId::new(ATTACKER);
        world.ensure_agent(&attacker);
        let rec = EventRecorder::new(&world)?;
        Ok(Self {
            world,
            rec,
            controlled: [attacker.clone()].into(),
            attacker,
            metrics: BTreeMap::new(),
            flags: FeasibilityFlags::default(),
        })
    }

    pub fn control(&mut self, agent: &AgentId) {
        self.world.ensure_agent(agent);
        self.controlled.insert(agent.clone());
    }

    pub fn act<T>(
        &mut self,
        agent: &AgentId,
        role: Role,
        label: &str,
        body: impl FnOnce(&mut World) -> Result<T>,
    ) -> Result<T> {
        self.rec.act(&mut self.world, agent, role, label, body)
    }

    pub fn metric(&mut self, key: &str, value: f64) {
        self.metrics.insert(key.to_owned(), value);
    }

    pub fn finish(mut self, strategy: StrategyKind, outcome: Result<()>, closed_form_profit: Option<f64>) -> Execution {
        let failure = outcome
            .and_then(|()| self.world.ensure_flash_settled())
            .err()
            .map(|e| e.to_string());
        let prices = self.rec.initial_prices().clone();
        let unpaid_flash: f64 = self.world.flashloans().map_or(0.0, |f| {
            f.open()
                .map(|(_, loan)| f.repayment_for(loan.principal) * prices.get(&loan.asset).copied().unwrap_or(0.0))
                .fold(0.0, |acc, v| acc + v)
        });
        self.flags.flash_repaid = unpaid_flash == 0.0;
        let exit_values: BTreeMap<AgentId, f64> = self
            .controlled
            .iter()
            .map(|a| (a.clone(), self.rec.exit_value(&self.world, a)))
            .collect();
        let simulated_profit = exit_values.values().sum::<f64>() - unpaid_flash;
        self.flags.profitable = simulated_profit > 0.0;
        let rel_deviation = closed_form_profit.map(|cf| (simulated_profit - cf).abs() / cf.abs().max(1.0));
        let worst = self
            .world
            .conservation_report()
            .into_iter()
            .map(|c| c.rel_error)
            .fold(0.0, f64::max);
        self.metrics.insert("conservation_rel_error".into(), worst);
        self.metrics
            .insert("unattributed_ops".into(), self.rec.unattributed(&self.world) as f64);
        self.metrics.insert("steps".into(), self.world.step() as f64);
        let roleplay = classify_roleplay(self.rec.event(), &self.controlled);
        let residual = ResidualState::capture(&self.world);
        let (event, ledger) = self.rec.into_parts();
        let report = AttackReport {
            strategy,
            feasible: failure.is_none(),
            failure,
            simulated_profit,
            closed_form_profit,
            rel_deviation,
            attacker_gain: attacker_gain(&ledger, &self.controlled),
            unpaid_flash,
            exit_values,
            flags: self.flags,
            metrics: self.metrics,
            roleplay,
            ledger,
            residual,
            actions: event.actions,
        };
        Execution {
            report,
            world: self.world,
        }
    }
}

/// Runs `kind` with `params`, filling unspecified parameters with the
/// closed-form optimum for the scenario.
pub fn run(world: &World, kind: StrategyKind, params: &StrategyParams) -> Result<Execution> {
    params.ensure_keys(kind.param_keys())?;
    match kind {
        StrategyKind::BorrowBuy => {
            let out_s = match params.non_negative("out_s")? {
                Some(v) => v,
                None => {
                    let i = BbInputs::from_world(world)?;
                    bb_single_formula(i.init_s, i.cr_m, i.reserve_s)?.out_s
                }
            };
            bb_single_run(world, out_s)
        }
        StrategyKind::BorrowBuyMulti => {
            let rounds = params.count("rounds")?.unwrap_or(DEFAULT_MAX_ROUNDS);
            bb_multi_run(world, rounds)
        }
        StrategyKind::BorrowDonate | StrategyKind::BorrowDonateEnhanced => {
            let enhanced = kind == StrategyKind::BorrowDonateEnhanced;
            let p = BdParams::resolve(world, params, enhanced)?;
            if enhanced {
                bd_enhanced_run(world, &p)
            } else {
                bd_primitive_run(world, &p)
            }
        }
    }
}
