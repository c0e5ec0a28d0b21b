use thiserror::Error;

use crate::world::{AgentId, AssetId};

pub type Result<T, E = SimError> = std::result::Result<T, E>;

/// Errors raised by world, protocol and strategy operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("asset {0} is already registered")]
    DuplicateAsset(AssetId),
    #[error("agent {0} is already registered")]
    DuplicateAgent(AgentId),
    #[error("asset {0} is not registered")]
    UnknownAsset(AssetId),
    #[error("agent {0} is not registered")]
    UnknownAgent(AgentId),
    #[error("invalid amount {0}: amounts must be finite and non-negative")]
    InvalidAmount(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{agent} holds {available} {asset}, needs {needed}")]
    InsufficientBalance {
        agent: AgentId,
        asset: AssetId,
        needed: f64,
        available: f64,
    },
    #[error("no {0} registered in this world")]
    MissingComponent(&'static str),
    #[error("asset {0} is not traded by the pool")]
    NotPoolAsset(AssetId),
    #[error("asset {0} is not listed in the lending market")]
    NotListed(AssetId),
    #[error("borrow of {requested} {asset} exceeds capacity {capacity} for {agent}")]
    CapacityExceeded {
        agent: AgentId,
        asset: AssetId,
        requested: f64,
        capacity: f64,
    },
    #[error("market holds {available} {asset}, requested {requested}")]
    LiquidityExhausted {
        asset: AssetId,
        requested: f64,
        available: f64,
    },
    #[error("repay of {amount} {asset} exceeds debt {debt}")]
    Overpay { asset: AssetId, amount: f64, debt: f64 },
    #[error("withdrawing {amount} {asset} would leave {agent} unhealthy")]
    UnhealthyWithdraw {
        agent: AgentId,
        asset: AssetId,
        amount: f64,
    },
    #[error("{0} is healthy and cannot be liquidated")]
    TargetHealthy(AgentId),
    #[error("seizure of {seize} {asset} exceeds available collateral {available}")]
    SeizureExceedsCollateral { asset: AssetId, seize: f64, available: f64 },
    #[error("asset {0} has no oracle price source")]
    Unpriced(AssetId),
    #[error("vault has no shares outstanding; share price undefined")]
    EmptyVault,
    #[error("flashloan provider holds {available} {asset}, requested {requested}")]
    FlashLiquidity {
        asset: AssetId,
        requested: f64,
        available: f64,
    },
    #[error("flashloan {handle} cannot be repaid: {agent} holds {available}, owes {owed}")]
    Unrepayable {
        handle: u64,
        agent: AgentId,
        owed: f64,
        available: f64,
    },
    #[error("unknown flashloan handle {0}")]
    UnknownLoan(u64),
    #[error("event ended with {0} open flashloan(s)")]
    OpenFlashLoan(usize),
    #[error("closed form undefined: {0}")]
    Infeasible(String),
}
