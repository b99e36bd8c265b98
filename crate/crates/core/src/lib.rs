//! Separable B-spline (SPAN) and MLP function approximators, classic control
//! environments, and PPO, SAC and IQL trainers built on them.

pub mod bspline;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod envs;
pub mod error;
pub mod iql;
pub mod linalg;
pub mod metrics;
pub mod mlp;
pub mod net;
pub mod policy;
pub mod ppo;
pub mod rng;
pub mod sac;
pub mod span;
pub mod train;

pub use error::{Result, SpanError};
