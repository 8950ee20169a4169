// SPDX-License-Identifier: MIT OR Apache-2.0

//! Steering-vector toolkit: contrastive direction extraction, activation
//! manifold estimation, manifold-projected steering and its diagnostics, plus
//! a planted toy transformer to exercise them end to end.
//!
//! The modules build on each other roughly in this order:
//!
//! * [`linalg`] — dense `f64` matrices, covariance and a Jacobi eigensolver.
//! * [`asf`] — the activation-set interchange format.
//! * [`iforest`], [`direction`] — outlier filtering, difference-in-means
//!   directions and layer selection.
//! * [`manifold`] — PCA basis, projection and the interference-noise report.
//! * [`toymodel`] — seeded decoder-only transformer with a planted readout.
//! * [`steering`], [`amplification`] — interventions, α-sweeps and shift
//!   diagnostics.
//! * [`demo`] — the whole pipeline in one call.

pub mod amplification;
pub mod asf;
pub mod demo;
pub mod direction;
pub mod error;
pub mod iforest;
pub mod linalg;
pub mod manifold;
pub mod rng;
pub mod steering;
pub mod toymodel;

pub use error::{Error, ErrorKind, Result};
pub use rng::SeedTree;
