//! Software model of a pipelined FFT frequency-measurement chain for
//! time-stretched pulsed signals: stimulus generation, framing, lane
//! distribution, fixed-point spectral analysis, parabolic peak fitting, and
//! a discrete-event model of the result transfer datapath.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distributor;
pub mod error;
pub mod fitting;
pub mod fixed;
pub mod framing;
pub mod harness;
pub mod signal_gen;
pub mod spectral;
pub mod transfer_sim;

pub use error::{Error, Result};
pub use fixed::FixedPointFormat;
