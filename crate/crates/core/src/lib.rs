//! Contract-theoretic incentives for federated learning.
//!
//! Clients carry two private characteristics: the coverage quality of their
//! local data (hidden type) and their training effort (hidden action). The
//! server publishes a menu of `(fee, reward)` contracts; each client
//! self-selects, trains, and is paid when its model passes the server's
//! generalization benchmark. Passing models are aggregated with
//! reward-proportional weights.
//!
//! - [`coverage`] measures data-coverage quality and buckets it into types.
//! - [`contract`] solves, irons and audits contract menus.
//! - [`sim`] plays out one contracting round and its payment ledger.
//! - [`learning`] trains and aggregates client models and compares payment schemes.

pub mod config;
pub mod contract;
pub mod coverage;
pub mod error;
pub mod learning;
pub mod sim;

pub use error::{Error, Result};
