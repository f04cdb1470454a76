//! Structural market simulation for platform conduct counterfactuals.
//!
//! The pipeline estimates random-coefficient nested logit demand, backs out
//! marginal costs from Bertrand first-order conditions, re-solves prices when
//! the platform sets its smart-pricing hosts' prices to maximize commission
//! revenue, and reports the consumer, producer and total welfare changes.

pub mod dataio;
pub mod cli;
pub mod demand;
pub mod error;
pub mod estimation;
pub mod supply;
pub mod welfare;

pub use error::{Error, ErrorKind, Result};
