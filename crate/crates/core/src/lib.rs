//! Approximate R-optimal designs for multi-response regression models on
//! discrete design spaces.

pub mod cli;
pub mod config;
pub mod equivalence;
pub mod error;
pub mod information;
pub mod model;
pub mod multiplicative;
pub mod problem;
pub mod reporting;
pub mod solver;
pub mod symmetry;

pub use error::{Error, Result};
