//! Core algorithms for an open-set semi-supervised learning lab.
//!
//! The crate bundles a small dense network with a K-way class head and a
//! one-vs-all detector head ([`nn`]), synthetic open-set data ([`data`]),
//! the supervised and unsupervised loss family ([`losses`]), gradient-variance
//! and loss-based selection of unlabeled data ([`selection`]), the periodic
//! selection training loop ([`trainer`]), evaluation metrics ([`metrics`]) and
//! a numerical harness for SGD convergence under mixed gradient oracles
//! ([`theory`]).

// `!(x >= 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod selection;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
