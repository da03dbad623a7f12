//! Touch-Mark laboratory: a four-agent, two-team competitive particle game,
//! MADDPG and its controller-assisted ensemble variant, incentive schemes
//! for unequal teams, and an evaluation harness.

pub mod error;
pub mod label;
pub mod env;
pub mod nn;
pub mod replay;
pub mod maddpg;
pub mod cmaddpg;
pub mod incentive;
pub mod incentive_rl;
pub mod metrics;
pub mod train;
pub mod eval;
pub mod runner;

pub use error::{Error, Result};
pub use label::PolicyLabel;
