//! Frenkel-Kontorova ground states over one-dimensional substitution quasicrystals.

pub mod builder;
pub mod chain;
pub mod cli;
pub mod config;
pub mod energy;
pub mod error;
pub mod field;
pub mod minimizer;
pub mod order;
pub mod rotation;
pub mod substitution;
pub mod tower;
pub mod twist;

pub use error::{FkError, Result};
