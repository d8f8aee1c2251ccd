//! Learned graph control barrier functions for decentralized multi-agent
//! collision avoidance, with the environments, baselines and evaluation
//! harness around them.

pub mod autodiff;
pub mod dynamics;
pub mod evalx;
pub mod learner;
pub mod nets;
pub mod qpbase;
pub mod safectl;
pub mod world;
mod error;

pub use dynamics::{DynamicsModel, ModelKind};
pub use error::{Error, Result};
