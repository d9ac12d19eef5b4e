#![cfg_attr(not(feature = "std"), no_std)]

//! Decentralized controller synthesis for networks of stochastic control
//! systems.
//!
//! Each subsystem is abstracted implicitly onto a uniform grid and played as a
//! finite two-player game against its environment: the controller picks an
//! external input, the adversary picks any quantized internal input. Tabular
//! minimax-Q learns a controller per subsystem from samples of a black-box
//! simulator; the composed network is then certified with a closed-form lower
//! bound on its satisfaction probability.
//!
//! The crate builds without `std` (it needs `alloc`). The `std` feature only
//! forwards to the dependencies.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod analysis;
pub mod error;
pub mod game;
pub mod learner;
pub mod math;
pub mod model;
pub mod oracle;
pub mod quantize;
pub mod rng;
pub mod spec_lang;

pub use error::{Error, Result};
