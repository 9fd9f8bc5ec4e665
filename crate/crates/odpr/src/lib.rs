//! Offline decoupled prioritized resampling (ODPR).
//!
//! Offline RL datasets mix good and bad behavior. This crate reweights a
//! fixed dataset so that policy improvement sees the better transitions more
//! often, while policy evaluation keeps sampling uniformly (the "decoupled"
//! part). Two priority families are provided:
//!
//! * advantage-based (`odpr-a`): fit a state value function, score each
//!   transition by its one-step advantage, and iterate so each round's
//!   priorities reshape the behavior the next value fit sees;
//! * return-based (`odpr-r`): score each transition by the normalized return
//!   of its trajectory.
//!
//! The crate keeps exact tabular machinery alongside the sampled pipeline so
//! the improvement guarantee of prioritized reweighting can be checked
//! against closed-form policy evaluation, and ships a CLI (`odpr`) that runs
//! the toy experiments end to end.

pub mod algos;
pub mod config;
pub mod dataset;
pub mod envs;
pub mod error;
pub mod harness;
pub mod priority;
pub mod rng;
pub mod sampling;
pub mod value;
pub mod verify;

pub use dataset::{Dataset, Transition};
pub use error::OdprError;
pub use priority::PriorityWeights;

pub type Result<T> = std::result::Result<T, OdprError>;
