//! Reinforcement learning in factored MDPs: posterior sampling and
//! optimism over factored confidence sets, with exact planners, regret
//! bound calculators and a seeded experiment harness.

pub mod agents;
pub mod bounds;
pub mod config;
pub mod error;
pub mod estimation;
pub mod fmdp;
pub mod harness;
pub mod par;
pub mod planner;
pub mod trajectory;

pub use agents::{Agent, AgentConfig, Algorithm};
pub use config::{EnvironmentSpec, ExperimentConfig};
pub use error::{FactorKind, FrlError, Result};
pub use fmdp::{FactoredMdp, FactoredVector, FlatIndex, GraphStructure, Scope, TabularMdp};
pub use par::Execution;
pub use planner::{Policy, ValueTable};

/// Random number generator used for every seeded stream.
pub type SimRng = rand_chacha::ChaCha8Rng;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
