//! Hybrid ANN–SNN pose estimation from event-camera streams.
//!
//! A dense network runs at a low rate and initializes the membrane
//! potentials and output integrator of a spiking network, which then tracks
//! the pose at a high rate from the sparse event stream.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ann;
pub mod energy;
pub mod error;
pub mod events;
pub mod grad;
pub mod hybrid;
pub mod io;
pub mod lif;
pub mod metrics;
pub mod snn;
pub mod tensornet;

pub use error::{Error, Result};
