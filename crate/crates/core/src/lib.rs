//! Quasi-proportional winners-pay auctions.
//!
//! Each bidder receives the share `f(b_i) / sum_j f(b_j)` of a divisible good
//! and pays `b_i` times that share. This crate computes allocations and
//! revenue, best responses and best-response dynamics, the first-order
//! equilibrium characterizations with their lower bounds, and the
//! revenue-maximizing steepness sweeps comparing exponential weights
//! `e^{cx} - 1` against power weights `x^p`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod auction;
pub mod cli;
pub mod equilibrium;
pub mod error;
pub mod experiments;
pub mod response;
pub mod weights;

pub use auction::{allocate, settle, AuctionOutcome, BidVector, ValuationProfile};
pub use equilibrium::{
    bound_premise, box_mapping_probe, char_residual, char_residual_generic, corollary_bounds,
    BoundVector, BoxProbeReport,
};
pub use error::{Error, Result};
pub use response::{
    best_response, best_response_vector, run_dynamics, DynamicsOptions, DynamicsTrace,
    ResponseProblem,
};
pub use weights::{DerivOrder, Family, WeightSpec};
