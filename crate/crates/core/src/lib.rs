//! Simulator for auctioning delivery jobs among energy-constrained drones.
//!
//! Delivery drones that can reach the surveillance drone and a base station
//! within the latency budget bid `demand / energy share`; the job is sold by
//! a classical auction or by a trained monotone-network auction.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bidding;
pub mod energy;
pub mod error;
pub mod harness;
pub mod mechanisms;
pub mod neural;
pub mod par;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};
