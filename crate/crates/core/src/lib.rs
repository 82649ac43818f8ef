//! Sequential input-and-simulation budget allocation for ranking and
//! selection under Bayesian input uncertainty.

pub mod allocation;
pub mod error;
pub mod harness;
pub mod input_models;
pub mod krr;
pub mod osar;
pub mod problems;
pub mod rates;
pub mod rns_allocator;

pub use error::{OsarError, Result};
