//! Oracle pricing and the flashloan provider.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::world::{check_amount, covers, AgentId, AssetId, Op, World};

/// Where the oracle reads an asset's price from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceSource {
    Fixed(f64),
    /// Spot price of the pool's manipulated side, updated after every swap.
    AmmSpot,
    /// Share price of the vault (underlying per share).
    VaultPrice,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OraclePolicy {
    pub sources: BTreeMap<AssetId, PriceSource>,
}

impl OraclePolicy {
    pub fn set(&mut self, asset: AssetId, source: PriceSource) {
        self.sources.insert(asset, source);
    }

    pub fn source(&self, asset: &AssetId) -> Option<PriceSource> {
        self.sources.get(asset).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LoanHandle(pub u64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlashLoan {
    pub agent: AgentId,
    pub asset: AssetId,
    pub principal: f64,
}

/// Flashloan provider. A loan of `p` is settled by paying `p / (1 - fee)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FlashloanProvider {
    pub fee: f64,
    liquidity: BTreeMap<AssetId, f64>,
    open: BTreeMap<u64, FlashLoan>,
    next_handle: u64,
}

impl FlashloanProvider {
    pub fn new(fee: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&fee) {
            return Err(SimError::InvalidParameter(format!(
                "flashloan fee must lie in [0, 1), got {fee}"
            )));
        }
        Ok(Self { fee, ..Self::default() })
    }

    pub fn with_liquidity(mut self, asset: AssetId, amount: f64) -> Result<Self> {
        check_amount(amount)?;
        *self.liquidity.entry(asset).or_insert(0.0) += amount;
        Ok(self)
    }

    pub fn liquidity(&self, asset: &AssetId) -> f64 {
        self.liquidity.get(asset).copied().unwrap_or(0.0)
    }

    pub fn open_loans(&self) -> usize {
        self.open.len()
    }

    pub fn repayment_for(&self, principal: f64) -> f64 {
        principal / (1.0 - self.fee)
    }

    pub fn loan(&self, handle: LoanHandle) -> Option<&FlashLoan> {
        self.open.get(&handle.0)
    }

    pub fn open(&self) -> impl Iterator<Item = (LoanHandle, &FlashLoan)> {
        self.open.iter().map(|(h, l)| (LoanHandle(*h), l))
    }
}

impl World {
    pub fn set_price_source(&mut self, asset: AssetId, source: PriceSource) -> Result<()> {
        self.ensure_asset(&asset)?;
        self.oracle.set(asset, source);
        Ok(())
    }

    /// Current oracle price of `asset` in stable units. Pure.
    pub fn price(&self, asset: &AssetId) -> Result<f64> {
        self.price_at_depth(asset, 0)
    }

    fn price_at_depth(&self, asset: &AssetId, depth: u8) -> Result<f64> {
        if depth > 4 {
            return Err(SimError::Unpriced(asset.clone()));
        }
        match self.oracle.source(asset) {
            Some(PriceSource::Fixed(p)) => Ok(p),
            Some(PriceSource::AmmSpot) => {
                let pool = self.pool.as_ref().ok_or(SimError::MissingComponent("pool"))?;
                if *asset != pool.manipulated {
                    return Err(SimError::Unpriced(asset.clone()));
                }
                Ok(pool.spot_price_m() * self.price_at_depth(&pool.stable, depth + 1)?)
            }
            Some(PriceSource::VaultPrice) => {
                let vault = self.vault.as_ref().ok_or(SimError::MissingComponent("vault"))?;
                if *asset != vault.share {
                    return Err(SimError::Unpriced(asset.clone()));
                }
                Ok(vault.share_price()? * self.price_at_depth(&vault.underlying, depth + 1)?)
            }
            None => Err(SimError::Unpriced(asset.clone())),
        }
    }

    /// Prices of every asset that has a source.
    pub fn prices(&self) -> Result<BTreeMap<AssetId, f64>> {
        self.oracle
            .sources
            .keys()
            .map(|a| Ok((a.clone(), self.price(a)?)))
            .collect()
    }

    /// Wallet value of `agent` at the given prices. Unpriced holdings fail.
    pub fn wallet_value(&self, agent: &AgentId, prices: &BTreeMap<AssetId, f64>) -> Result<f64> {
        self.holdings(agent)
            .iter()
            .map(|(asset, amt)| {
                prices
                    .get(asset)
                    .map(|p| p * amt)
                    .ok_or_else(|| SimError::Unpriced(asset.clone()))
            })
            .sum()
    }

    /// Installs the provider. Its liquidity is issued as scenario seeding.
    pub fn install_flashloans(&mut self, provider: FlashloanProvider) -> Result<()> {
        for (asset, amt) in &provider.liquidity {
            self.ensure_asset(asset)?;
            self.adjust_issued(asset, *amt);
        }
        self.flash = Some(provider);
        Ok(())
    }

    pub fn flash_borrow(&mut self, agent: &AgentId, asset: &AssetId, amount: f64) -> Result<LoanHandle> {
        self.ensure_known(agent, asset)?;
        check_amount(amount)?;
        let provider = self
            .flash
            .as_mut()
            .ok_or(SimError::MissingComponent("flashloan provider"))?;
        let available = provider.liquidity(asset);
        if !covers(available, amount) {
            return Err(SimError::FlashLiquidity {
                asset: asset.clone(),
                requested: amount,
                available,
            });
        }
        let amount = amount.min(available);
        *provider.liquidity.get_mut(asset).expect("covered") -= amount;
        let handle = provider.next_handle;
        provider.next_handle += 1;
        provider.open.insert(
            handle,
            FlashLoan {
                agent: agent.clone(),
                asset: asset.clone(),
                principal: amount,
            },
        );
        self.give(agent, asset, amount);
        self.record(
            agent,
            Op::FlashBorrow {
                handle,
                asset: asset.clone(),
                amount,
            },
        );
        Ok(LoanHandle(handle))
    }

    /// Settles a loan from the borrower's wallet. Returns the fee paid.
    pub fn flash_repay(&mut self, handle: LoanHandle) -> Result<f64> {
        let provider = self
            .flash
            .as_ref()
            .ok_or(SimError::MissingComponent("flashloan provider"))?;
        let loan = provider
            .open
            .get(&handle.0)
            .cloned()
            .ok_or(SimError::UnknownLoan(handle.0))?;
        let owed = provider.repayment_for(loan.principal);
        let available = self.balance(&loan.agent, &loan.asset);
        if !covers(available, owed) {
            return Err(SimError::Unrepayable {
                handle: handle.0,
                agent: loan.agent,
                owed,
                available,
            });
        }
        let paid = self.take(&loan.agent, &loan.asset, owed)?;
        let provider = self.flash.as_mut().expect("checked above");
        provider.open.remove(&handle.0);
        *provider.liquidity.entry(loan.asset.clone()).or_insert(0.0) += paid;
        self.record(
            &loan.agent,
            Op::FlashRepay {
                handle: handle.0,
                asset: loan.asset,
                paid,
            },
        );
        Ok(paid - loan.principal)
    }

    /// Every loan issued within an event must be settled by its end.
    pub fn ensure_flash_settled(&self) -> Result<()> {
        match self.flash.as_ref().map_or(0, FlashloanProvider::open_loans) {
            0 => Ok(()),
            n => Err(SimError::OpenFlashLoan(n)),
        }
    }
}
