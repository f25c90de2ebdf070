//! Scenario files, snapshots and the run loop behind the `hiershare` binary.

pub mod config;
pub mod runner;
pub mod snapshot;
