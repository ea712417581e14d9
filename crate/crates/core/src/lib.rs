//! Two-stream multi-task spatiotemporal CNN for convective storm nowcasting.
//!
//! The crate is self-contained: a small float64 tensor engine with
//! reverse-mode differentiation ([`tensor`]), a pixel-wise sampling pipeline
//! over co-registered radar and satellite sequences ([`data`]), the
//! two-stream network with its classification and weighted regression heads
//! ([`model`]), the training loop ([`train`]), forecast verification
//! ([`metrics`]) and the operator commands behind the `tsmt` binary
//! ([`cli`]).

pub mod cli;
pub mod data;
pub mod error;
mod fsutil;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
