//! Deterministic simulator for multi-role DeFi attacks.
//!
//! Four protocol components (a constant-product pool, a lending market, an
//! interest-bearing vault and a flashloan provider) live inside a single
//! [`world::World`]. The [`strategies`] module executes the Borrow-and-Buy
//! and Borrow-and-Donate attacks against it, compares the outcome with the
//! closed-form profit expressions, and [`optimizer`] searches the parameter
//! space numerically.

pub mod amm;
#[cfg(feature = "cli")]
pub mod cli;
pub mod envservices;
pub mod error;
pub mod lending;
pub mod optimizer;
pub mod report;
pub mod roleplay;
pub mod scenario;
pub mod strategies;
pub mod vault;
pub mod world;

pub use error::{Result, SimError};
pub use world::{AgentId, AssetId, World};
