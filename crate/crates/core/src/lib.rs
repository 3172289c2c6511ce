//! Simulation framework for measuring when pool-based active learning beats
//! random sampling on synthetic binary classification tasks.

pub mod classifiers;
pub mod cli;
pub mod data;
pub mod error;
pub mod evalstat;
pub mod factoranalysis;
pub mod runner;
pub mod seed;
pub mod strategies;
pub mod taskgen;

pub use error::{Error, Result};
