//! Physics-constrained Gaussian-process surrogate for concrete failure
//! surfaces.
//!
//! The library learns the failure-surface observable as a function of
//! volumetric strain, deviatoric strain, and pressure from triaxial
//! compression data, optionally enforcing two derivative constraints:
//! strength must grow with confinement, and the deviatoric response must
//! harden up to its peak and soften after it. The hardening constraint is
//! enforced probabilistically through chance constraints during
//! hyperparameter optimization; both constraints are enforced on the
//! polynomial mean through inequality-constrained ridge regression.
//!
//! A reference elastoplastic simulator ([`kcc`]) with interpolated
//! strength envelopes synthesizes training and evaluation data, and the
//! [`cli`] module wires everything into the `cgpr` command-line tool.

// validation guards are written as `!(x > 0.0)` so that NaN fails them
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod constraints;
pub mod dataset;
pub mod error;
pub mod gp;
pub mod kcc;
pub mod kernel;
pub mod linalg;
pub mod metrics;
pub mod model_io;
pub mod normal;
pub mod polymean;
pub mod qp;
pub mod render;

pub use error::{Error, Result};
