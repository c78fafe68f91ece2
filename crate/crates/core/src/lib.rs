//! Incentive-aware network utility maximization: dual pricing, subsidized
//! exchange mechanisms, and underlay D2D channel models.

pub mod d2d;
pub mod dual_solver;
pub mod error;
pub mod experiments;
pub mod mechanisms;
pub mod numeric;
pub mod strategies;
pub mod valuation;

pub use error::{Error, Result};
