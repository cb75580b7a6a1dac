//! International mean-variance portfolio optimisation with an integrated
//! currency overlay built from FX forward contracts.

pub mod cli;
pub mod error;
pub mod fixture;
pub mod frontier;
pub mod market_data;
pub mod overlay;
pub mod problem;
pub mod solver;

pub use error::{Error, Result};
