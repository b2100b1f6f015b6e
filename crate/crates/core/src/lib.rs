//! Incentive mechanism for online federated learning under two-sided
//! incomplete information: Bayesian-persuasion signaling on the server's
//! communication resources plus UCB-driven dynamic pricing.

pub mod bandit;
pub mod config;
pub mod design;
pub mod engine;
pub mod error;
pub mod io;
pub mod mechanism;
pub mod model;
pub mod par;
pub mod sim;
pub mod verify;

pub use error::{Error, Result};
