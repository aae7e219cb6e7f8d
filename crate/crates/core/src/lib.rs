//! Elastic, fault-tolerant server/runner framework for large-ensemble
//! bootstrap particle filters.
//!
//! The ensemble is driven by three kinds of OS processes supervised by a
//! [`launcher`]: one [`server`] that gathers weights, resamples, and schedules
//! propagation work, and a dynamic set of [`runner`] processes that propagate
//! particles through a pluggable [`model`], weight them against observations,
//! and keep states in a bounded local cache ([`store`]) backed by a shared
//! global store. All control traffic uses the length-prefixed message
//! protocol in [`proto`]; every process records structured [`trace`] events
//! from which the [`metrics`] module computes cache, load, and scaling
//! reports and checks the framework's ordering and exactly-once guarantees.

pub mod config;
pub mod filter;
pub mod launcher;
pub mod metrics;
pub mod model;
pub mod proto;
pub mod rng;
pub mod runner;
pub mod sched;
pub mod server;
pub mod sim;
pub mod statefile;
pub mod store;
pub mod trace;

pub use store::ParticleId;
