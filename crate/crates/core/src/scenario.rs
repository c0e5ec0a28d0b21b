//! Scenario files: a TOML description of assets, protocol components and
//! initial positions, validated and turned into a [`World`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::amm::ConstantProductPool;
use crate::envservices::{FlashloanProvider, PriceSource};
use crate::error::SimError;
use crate::lending::{CollateralRate, LendingMarket};
use crate::strategies::{StrategyKind, StrategyParams};
use crate::vault::InterestBearingVault;
use crate::world::{AgentId, AssetClass, AssetId, World};

/// Supplies every listed asset to the market.
pub const LENDER: &str = "lender";
/// Holds the vault shares that are not lent out.
pub const HOLDERS: &str = "holders";

pub const PRESETS: [(&str, &str); 4] = [
    ("bb_desk", include_str!("../presets/bb_desk.toml")),
    ("bd_desk", include_str!("../presets/bd_desk.toml")),
    ("agora_like", include_str!("../presets/agora_like.toml")),
    ("lodestar_like", include_str!("../presets/lodestar_like.toml")),
];

const INCIDENTS: &str = include_str!("../presets/incidents.toml");

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("unknown scenario `{0}` (not a file or a preset)")]
    Unknown(String),
    #[error(transparent)]
    Build(#[from] SimError),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetDecl {
    pub id: String,
    pub class: AssetClass,
    /// Defaults by class: stable fixed at 1, manipulated from the pool,
    /// interest-bearing from the vault.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price: Option<PriceSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    pub stable: String,
    pub manipulated: String,
    /// Symmetric reserves; alternative to the explicit pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reserve_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reserve_m: Option<f64>,
    #[serde(default)]
    pub fee: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ListingConfig {
    pub collateral_rate: f64,
    /// Amount the lender supplies and leaves borrowable.
    #[serde(default)]
    pub supplied: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    #[serde(default)]
    pub liq_incentive: f64,
    pub listings: BTreeMap<String, ListingConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaultConfig {
    pub share: String,
    pub underlying: String,
    /// Outstanding shares.
    pub supply: f64,
    /// Underlying backing them; defaults to `supply` (share price 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backing: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlashloanConfig {
    #[serde(default)]
    pub fee: f64,
    #[serde(default)]
    pub liquidity: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalanceConfig {
    pub agent: String,
    pub asset: String,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub assets: Vec<AssetDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<PoolConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub market: Option<MarketConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vault: Option<VaultConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flashloan: Option<FlashloanConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub balances: Vec<BalanceConfig>,
    /// Strategy parameters used when the command line leaves them out.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub defaults: BTreeMap<String, f64>,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let config: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
            ScenarioError::Parse {
                line,
                column,
                message: e.message().to_owned(),
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn preset(name: &str) -> Option<Self> {
        PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::parse(text).expect("shipped presets are valid"))
    }

    /// A file path if one exists, otherwise a preset name.
    pub fn resolve(path_or_name: &str) -> Result<Self, ScenarioError> {
        let path = Path::new(path_or_name);
        if path.exists() {
            Self::load(path)
        } else {
            Self::preset(path_or_name).ok_or_else(|| ScenarioError::Unknown(path_or_name.into()))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn fingerprint(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn defaults(&self) -> StrategyParams {
        StrategyParams(self.defaults.clone())
    }

    fn class_of(&self, id: &str) -> Option<AssetClass> {
        self.assets.iter().find(|a| a.id == id).map(|a| a.class)
    }

    fn check_ref(&self, field: &str, id: &str, class: Option<AssetClass>) -> Result<(), ScenarioError> {
        match (self.class_of(id), class) {
            (None, _) => Err(invalid(field, format!("undeclared asset `{id}`"))),
            (Some(c), Some(want)) if c != want => Err(invalid(field, format!("`{id}` is {c:?}, expected {want:?}"))),
            _ => Ok(()),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        fn non_negative(field: &str, v: f64) -> Result<(), ScenarioError> {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(invalid(field, format!("must be a non-negative number, got {v}")))
            }
        }
        fn fraction(field: &str, v: f64, upper_open: bool) -> Result<(), ScenarioError> {
            let ok = v >= 0.0 && if upper_open { v < 1.0 } else { v <= 1.0 };
            if ok {
                Ok(())
            } else {
                let range = if upper_open { "[0, 1)" } else { "[0, 1]" };
                Err(invalid(field, format!("must lie in {range}, got {v}")))
            }
        }

        if self.assets.is_empty() {
            return Err(invalid("assets", "at least one asset is required"));
        }
        for (i, a) in self.assets.iter().enumerate() {
            if self.assets[..i].iter().any(|b| b.id == a.id) {
                return Err(invalid(
                    format!("assets[{i}].id"),
                    format!("duplicate asset `{}`", a.id),
                ));
            }
            match a.price {
                Some(PriceSource::Fixed(p)) if !(p.is_finite() && p > 0.0) => {
                    return Err(invalid(format!("assets[{i}].price"), "fixed price must be positive"));
                }
                Some(PriceSource::AmmSpot) if self.pool.is_none() => {
                    return Err(invalid(format!("assets[{i}].price"), "amm_spot needs a [pool]"));
                }
                Some(PriceSource::VaultPrice) if self.vault.is_none() => {
                    return Err(invalid(format!("assets[{i}].price"), "vault_price needs a [vault]"));
                }
                _ => {}
            }
        }
        if let Some(p) = &self.pool {
            self.check_ref("pool.stable", &p.stable, None)?;
            self.check_ref("pool.manipulated", &p.manipulated, None)?;
            if p.stable == p.manipulated {
                return Err(invalid("pool.manipulated", "must differ from pool.stable"));
            }
            match (p.l0, p.reserve_s, p.reserve_m) {
                (Some(l0), None, None) if l0 > 0.0 && l0.is_finite() => {}
                (Some(_), None, None) => return Err(invalid("pool.l0", "must be positive")),
                (None, Some(s), Some(m)) => {
                    for (f, v) in [("pool.reserve_s", s), ("pool.reserve_m", m)] {
                        if !(v > 0.0 && v.is_finite()) {
                            return Err(invalid(f, "must be positive"));
                        }
                    }
                }
                _ => return Err(invalid("pool", "give either `l0` or both `reserve_s` and `reserve_m`")),
            }
            fraction("pool.fee", p.fee, true)?;
        }
        if let Some(m) = &self.market {
            fraction("market.liq_incentive", m.liq_incentive, true)?;
            for (id, l) in &m.listings {
                let base = format!("market.listings.{id}");
                self.check_ref(&base, id, None)?;
                fraction(&format!("{base}.collateral_rate"), l.collateral_rate, false)?;
                non_negative(&format!("{base}.supplied"), l.supplied)?;
            }
        }
        if let Some(v) = &self.vault {
            self.check_ref("vault.share", &v.share, Some(AssetClass::InterestBearing))?;
            self.check_ref("vault.underlying", &v.underlying, None)?;
            non_negative("vault.supply", v.supply)?;
            if let Some(b) = v.backing {
                non_negative("vault.backing", b)?;
                if v.supply == 0.0 && b > 0.0 {
                    return Err(invalid("vault.backing", "backing without shares"));
                }
            }
            let lent = self
                .market
                .as_ref()
                .and_then(|m| m.listings.get(&v.share))
                .map_or(0.0, |l| l.supplied);
            if lent > v.supply {
                return Err(invalid(
                    format!("market.listings.{}.supplied", v.share),
                    format!("exceeds vault.supply ({lent} > {})", v.supply),
                ));
            }
        }
        if let Some(f) = &self.flashloan {
            fraction("flashloan.fee", f.fee, true)?;
            for (id, amt) in &f.liquidity {
                self.check_ref(&format!("flashloan.liquidity.{id}"), id, None)?;
                non_negative(&format!("flashloan.liquidity.{id}"), *amt)?;
            }
        }
        for (i, b) in self.balances.iter().enumerate() {
            self.check_ref(&format!("balances[{i}].asset"), &b.asset, None)?;
            non_negative(&format!("balances[{i}].amount"), b.amount)?;
        }
        for (k, v) in &self.defaults {
            if !v.is_finite() {
                return Err(invalid(format!("defaults.{k}"), "must be finite"));
            }
        }
        Ok(())
    }

    /// Checks that the components a strategy needs are present.
    pub fn supports(&self, kind: StrategyKind) -> Result<(), ScenarioError> {
        let need: &[(&str, bool)] = if kind.is_borrow_buy() {
            &[("pool", self.pool.is_some()), ("market", self.market.is_some())]
        } else {
            &[
                ("vault", self.vault.is_some()),
                ("market", self.market.is_some()),
                ("flashloan", self.flashloan.is_some()),
            ]
        };
        match need.iter().find(|(_, present)| !present) {
            Some((section, _)) => Err(invalid(*section, format!("required by strategy `{kind}`"))),
            None => Ok(()),
        }
    }

    fn price_source(&self, a: &AssetDecl) -> Option<PriceSource> {
        a.price.or(match a.class {
            AssetClass::Stable | AssetClass::Underlying => Some(PriceSource::Fixed(1.0)),
            AssetClass::Manipulated => self.pool.as_ref().map(|_| PriceSource::AmmSpot),
            AssetClass::InterestBearing => self.vault.as_ref().map(|_| PriceSource::VaultPrice),
        })
    }

    /// Seeds a fresh world: the lender supplies every listing, and vault
    /// shares that are not lent out stay with the holders.
    pub fn build_world(&self) -> Result<World, ScenarioError> {
        self.validate()?;
        let mut w = World::new();
        for a in &self.assets {
            w.register_asset(AssetId::new(&a.id), a.class)?;
        }
        for a in &self.assets {
            if let Some(src) = self.price_source(a) {
                w.set_price_source(AssetId::new(&a.id), src)?;
            }
        }
        let lender = AgentId::new(LENDER);
        let holders = AgentId::new(HOLDERS);
        w.register_agent(lender.clone())?;
        w.register_agent(holders.clone())?;
        if let Some(p) = &self.pool {
            let (rs, rm) = match p.l0 {
                Some(l0) => (l0, l0),
                None => (p.reserve_s.unwrap_or(0.0), p.reserve_m.unwrap_or(0.0)),
            };
            w.install_pool(ConstantProductPool::new(
                AssetId::new(&p.stable),
                AssetId::new(&p.manipulated),
                rs,
                rm,
                p.fee,
            )?)?;
        }
        if let Some(v) = &self.vault {
            w.install_vault(
                InterestBearingVault::new(AssetId::new(&v.share), AssetId::new(&v.underlying)),
                &holders,
                v.supply,
                v.backing.unwrap_or(v.supply),
            )?;
        }
        if let Some(f) = &self.flashloan {
            let provider = f
                .liquidity
                .iter()
                .try_fold(FlashloanProvider::new(f.fee)?, |p, (id, amt)| {
                    p.with_liquidity(AssetId::new(id), *amt)
                })?;
            w.install_flashloans(provider)?;
        }
        if let Some(m) = &self.market {
            let market = m.listings.iter().try_fold(
                LendingMarket::new(m.liq_incentive)?,
                |mk, (id, l)| -> Result<_, SimError> {
                    Ok(mk.list(AssetId::new(id), CollateralRate::new(l.collateral_rate)?))
                },
            )?;
            w.install_market(market)?;
            let share = self.vault.as_ref().map(|v| v.share.as_str());
            for (id, l) in &m.listings {
                if l.supplied == 0.0 {
                    continue;
                }
                let asset = AssetId::new(id);
                if Some(id.as_str()) == share {
                    w.transfer(&holders, &lender, &asset, l.supplied)?;
                } else {
                    w.credit(&lender, &asset, l.supplied)?;
                }
                w.deposit(&lender, &asset, l.supplied)?;
            }
        }
        for b in &self.balances {
            let agent = AgentId::new(&b.agent);
            w.ensure_agent(&agent);
            w.credit(&agent, &AssetId::new(&b.asset), b.amount)?;
        }
        Ok(w)
    }
}

/// Shape of a borrow-and-buy scenario, in the attack's own variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BorrowBuySetup {
    pub init_s: f64,
    pub init_m: f64,
    pub cr_m: f64,
    pub cr_s: f64,
    pub l0: f64,
    pub flash_fee: f64,
}

impl BorrowBuySetup {
    pub fn desk() -> Self {
        Self {
            init_s: 10_000.0,
            init_m: 0.0,
            cr_m: 0.9,
            cr_s: 0.9,
            l0: 1000.0,
            flash_fee: 0.0,
        }
    }

    pub fn config(&self) -> ScenarioConfig {
        let liquidity = 1e6 * (self.init_s + self.init_m + self.l0).max(1.0);
        ScenarioConfig {
            name: "borrow_buy".into(),
            description: String::new(),
            assets: vec![
                AssetDecl {
                    id: "USD".into(),
                    class: AssetClass::Stable,
                    price: None,
                },
                AssetDecl {
                    id: "TKA".into(),
                    class: AssetClass::Manipulated,
                    price: None,
                },
            ],
            pool: Some(PoolConfig {
                stable: "USD".into(),
                manipulated: "TKA".into(),
                l0: Some(self.l0),
                reserve_s: None,
                reserve_m: None,
                fee: 0.0,
            }),
            market: Some(MarketConfig {
                liq_incentive: 0.0,
                listings: BTreeMap::from([
                    (
                        "USD".into(),
                        ListingConfig {
                            collateral_rate: self.cr_s,
                            supplied: self.init_s,
                        },
                    ),
                    (
                        "TKA".into(),
                        ListingConfig {
                            collateral_rate: self.cr_m,
                            supplied: self.init_m,
                        },
                    ),
                ]),
            }),
            vault: None,
            flashloan: Some(FlashloanConfig {
                fee: self.flash_fee,
                liquidity: BTreeMap::from([("USD".into(), liquidity), ("TKA".into(), liquidity)]),
            }),
            balances: Vec::new(),
            defaults: BTreeMap::new(),
        }
    }
}

/// Shape of a borrow-and-donate scenario, in the attack's own variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BorrowDonateSetup {
    pub supply_ib: f64,
    pub borrowable_ib: f64,
    pub borrowable_s: f64,
    pub cr_s: f64,
    pub cr_ib: f64,
    pub liq_incentive: f64,
    pub flash_fee: f64,
    /// Stable-side flash liquidity.
    pub flash_liquidity: f64,
}

impl BorrowDonateSetup {
    pub fn desk() -> Self {
        Self {
            supply_ib: 1000.0,
            borrowable_ib: 400.0,
            borrowable_s: 5000.0,
            cr_s: 0.9,
            cr_ib: 0.9,
            liq_incentive: 0.1,
            flash_fee: 0.0,
            flash_liquidity: 1e6,
        }
    }

    pub fn config(&self) -> ScenarioConfig {
        ScenarioConfig {
            name: "borrow_donate".into(),
            description: String::new(),
            assets: vec![
                AssetDecl {
                    id: "USD".into(),
                    class: AssetClass::Stable,
                    price: None,
                },
                AssetDecl {
                    id: "yUSD".into(),
                    class: AssetClass::InterestBearing,
                    price: None,
                },
            ],
            pool: None,
            market: Some(MarketConfig {
                liq_incentive: self.liq_incentive,
                listings: BTreeMap::from([
                    (
                        "USD".into(),
                        ListingConfig {
                            collateral_rate: self.cr_s,
                            supplied: self.borrowable_s,
                        },
                    ),
                    (
                        "yUSD".into(),
                        ListingConfig {
                            collateral_rate: self.cr_ib,
                            supplied: self.borrowable_ib,
                        },
                    ),
                ]),
            }),
            vault: Some(VaultConfig {
                share: "yUSD".into(),
                underlying: "USD".into(),
                supply: self.supply_ib,
                backing: None,
            }),
            flashloan: Some(FlashloanConfig {
                fee: self.flash_fee,
                liquidity: BTreeMap::from([("USD".into(), self.flash_liquidity)]),
            }),
            balances: Vec::new(),
            defaults: BTreeMap::new(),
        }
    }
}

/// One historical incident in the shipped metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Incident {
    pub victim: String,
    pub date: String,
    pub loss_usd: f64,
    pub roles: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
}

#[derive(Debug, Deserialize)]
struct IncidentFile {
    incident: Vec<Incident>,
}

pub fn incidents() -> Vec<Incident> {
    toml::from_str::<IncidentFile>(INCIDENTS)
        .expect("shipped incident list is valid")
        .incident
}

pub fn total_losses_usd() -> f64 {
    incidents().iter().map(|i| i.loss_usd).sum()
}
