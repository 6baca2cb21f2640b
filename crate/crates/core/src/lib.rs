//! Processing-in-memory model of capsule-network dynamic routing.
//!
//! - [`capsnet`]: reference routing kernels over a pluggable scalar provider.
//! - [`arith`]: bit-level PE arithmetic (exp, inverse sqrt, division).
//! - [`planner`]: closed-form cost model for distributing routing over vaults.
//! - [`hmc`]: vault/bank address mapping and request service.
//! - [`rmas`]: host vs. PE arbitration.
//! - [`sim`]: scenario simulation, pipeline and energy models.

pub mod arith;
pub mod capsnet;
pub mod hmc;
pub mod par;
pub mod planner;
pub mod rmas;
pub mod sim;
