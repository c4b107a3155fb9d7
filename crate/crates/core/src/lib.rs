//! Hierarchical federated-learning simulator with a moving-target defense.
//!
//! Devices move on a Manhattan grid and reach the cloud through base
//! stations. Each FL round, a per-device deep-Q agent decides which devices
//! participate, using traffic-based anticipation of which devices are about
//! to turn Byzantine and a hard confidence constraint that keeps
//! high-risk devices out of the round.

// Parameter checks are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod anticipator;
mod error;
pub mod flengine;
pub mod harness;
pub mod mtdagent;
pub mod netmodel;
pub mod rng;
pub mod tensorkit;
pub mod timemodel;

pub use error::{Error, Result};
