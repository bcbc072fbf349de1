//! Optimal splitting of limit orders across several trading venues.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only the numerical
//! parts: the market data model, the target inventory curve, a backward
//! finite-difference solver for the reduced control problem, a seeded
//! continuous-time Markov chain market simulator, conjugate Bayesian
//! updates of every market parameter and the slice loop tying them
//! together. File formats and the command line live in the `xvenue` crate.
//!
//! Units: time is in minutes, rates are per minute, prices are in currency
//! units and volumes in shares.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod bayes;
pub mod curve;
pub mod engine;
mod error;
pub mod linalg;
pub mod market;
mod math;
pub mod otc;
pub mod presets;
pub mod rng;
pub mod simulator;
pub mod solver;

pub use error::{Error, Result};
pub use market::{Limit, MarketSpec};
