//! Entity matching as a compound toolchain.
//!
//! A chat model decides whether two entity descriptions refer to the same
//! real-world entity, calling tools ([`prepare`], [`browse`]) as it sees fit.
//! Parameters live in a path-addressed [`kernel::ParameterTree`] separate
//! from the tools, so [`tune`] can learn them from labelled data and
//! [`catalog`] can persist and recall them. [`harness`] measures the result
//! with precision, recall and F1.

pub mod backend;
pub mod browse;
pub mod catalog;
pub mod entity;
pub mod exec;
pub mod harness;
pub mod kernel;
pub mod knowledge;
pub mod matcher;
pub mod prepare;
pub mod tools;
pub mod tune;

#[cfg(test)]
mod test_server;

pub use entity::{Decision, EntityPair, EntityRecord};
pub use kernel::{ParamValue, ParameterTree};
pub use matcher::{MatchError, MatchPrediction, Matcher};

/// Version string stored with catalog records and reported by the service.
pub const TOOLCHAIN_VERSION: &str = env!("CARGO_PKG_VERSION");
