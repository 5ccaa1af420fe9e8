//! Doubly-robust regional effect estimation for small target strata, with
//! outcome models transfer-learned from related source strata.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below pin the common double-precision instantiations.

pub mod data;
pub mod error;
pub mod glm;
pub mod transfer;
pub mod causal;
pub mod sim;
mod scalar;

pub use data::{ObservationTable, StratumKey};
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Table = ObservationTable<f64>;
pub type LogisticFit = glm::ModelFit<f64>;
pub type MultinomialFit = glm::MultinomialFit<f64>;
