//! Federated training of user verification models where each user trains
//! against a secret bipolar codeword drawn from a BCH code.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codeword;
pub mod config;
pub mod ecc;
pub mod error;
pub mod federation;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod verification;

pub use error::{Error, Result};
