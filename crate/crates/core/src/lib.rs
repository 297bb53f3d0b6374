//! Seed-bank population models with multiple-merger reproduction.
//!
//! Forward particle systems (Moran and lookdown), the backward block-counting
//! chain and marked-partition coalescent, the limiting jump-diffusion, exact
//! generator evaluation, and the Monte Carlo machinery used to check the
//! duality and conditioning results that tie them together.

pub mod coalescent;
pub mod combinatorics;
pub mod diffusion;
pub mod duality;
pub mod engine;
pub mod error;
pub mod events;
pub mod measures;
pub mod experiments;
pub mod generators;
pub mod lookdown;
pub mod model;
pub mod moments;
pub mod moran;
mod particle;
pub mod parallel;
pub mod path;
pub mod registry;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
