//! OFDM integrated sensing and communication simulator.
//!
//! The pipeline has two stages. A base station illuminates a mobile user with
//! an OFDM radar waveform, collects the multipath echo and estimates the user's
//! position, radial velocity and an equivalent channel by alternating least
//! squares and Gauss-Newton updates. The estimated geometry then drives a
//! subcarrier partition and water-filling power allocation that minimise the
//! total transmit power under communication-rate and sensing-information
//! floors.
//!
//! Modules follow the pipeline: [`geometry`] holds the physics, [`waveform`]
//! synthesises echoes, [`estimator`] recovers the user state, [`allocator`]
//! distributes power and [`harness`] runs seeded Monte Carlo experiments.

// `!(x >= 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocator;
pub mod config;
pub mod error;
pub mod estimator;
pub mod exec;
pub mod geometry;
pub mod harness;
pub mod rng;
pub mod waveform;

pub use error::{Error, Result, Service};

pub use num_complex::Complex64;
