//! Log-cosine collaborative filtering for sparse implicit feedback.
//!
//! A scorer `h(s, r)` trained with the weighted negative-sampling objective
//! in [`objective`] converges to `log cos(s, r)`, the log of the Ochiai
//! coefficient between the purchaser sets of `s` and `r`. Sampled variants
//! converge to the same value plus a constant set by the sampling ratio.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod corpus;
pub mod eval;
pub mod nn;
pub mod objective;
pub mod sampling;
pub mod seed;
pub mod synth;
pub mod train;
