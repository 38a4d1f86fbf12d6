//! Multi-agent state entropy pre-training in reward-free Markov games.
//!
//! The crate covers tabular games and seeded sampling ([`game`]), empirical
//! and exact state distributions ([`stats`]), the joint, disjoint and mixture
//! entropy objectives ([`objectives`]), softmax policies ([`policy`]),
//! trust-region pure exploration ([`trpe`]), multi-agent TRPO fine-tuning
//! ([`matrpo`]), concrete environments ([`envs`]) and brute-force ground
//! truth for tiny games ([`oracle`]).

// `!(x > 0.0)` is how validation rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod envs;
pub mod error;
pub mod game;
pub mod game_io;
pub mod matrpo;
pub mod objectives;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod stats;
pub mod trpe;
pub mod verify;

pub use error::{Error, Result};
pub use game::{sample_batch, sample_trajectory, JointAction, JointState, MarkovGame, Trajectory, Transitions};
pub use objectives::{ObjectiveEstimate, ObjectiveFamily, ObjectiveKind};
pub use policy::{AgentPolicy, PolicyClass, PolicySet};
pub use stats::{EmpiricalDistribution, ExactDistributionSet};
pub use trpe::{SurrogateDataset, TrpeConfig};
pub use matrpo::{MatrpoConfig, RewardedTask};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
