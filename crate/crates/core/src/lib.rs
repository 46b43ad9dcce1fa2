//! On-line spot volatility estimation from rounded tick prices.
//!
//! Observed trade prices are treated as coarse views of a latent log-price
//! random walk. A particle filter with the optimal truncated-normal proposal
//! tracks the latent state and sequential EM-type recursions update the
//! volatility estimate after every tick.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod benchmark;
pub mod error;
pub mod exec;
pub mod ingest;
pub mod io;
pub mod model;
pub mod particle_filter;
pub mod pipeline;
pub mod rng;
pub mod sages;
pub mod seq_em;
pub mod simulator;
pub mod truncnorm;

pub use error::{Error, Result};
