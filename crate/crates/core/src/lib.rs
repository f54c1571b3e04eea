//! Clustered multi-agent LQR with zeroth-order policy optimization and
//! sequential-elimination clustering.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod harness;
pub mod linalg;
pub mod pcpo;
pub mod probe;
pub mod po;
pub mod rng;
pub mod rollout;
pub mod scenario;
mod serde_ext;
pub mod stats;
pub mod zo;

pub use error::{Divergence, Error, Result};
pub use linalg::{Mat, Policy, SystemTuple};
pub use rng::{Purpose, RngStream};
pub use scenario::ClusterScenario;
