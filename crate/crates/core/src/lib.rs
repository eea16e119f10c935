//! Multivariate time-series forecasting over a heterogeneous relation graph.
//!
//! Every variable of a multivariate series is a node. Three relation graphs
//! connect the nodes: a static similarity graph (absolute Pearson
//! correlation), a static causality graph (net transfer entropy) and a
//! dynamic graph learned from each input window. A multi-kernel temporal
//! convolution turns every window into node features, which are propagated
//! over the relation graphs with attention-weighted fusion and read out as
//! one forecast per variable.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, checkpoints
//! and the command-line driver live in the `hetcast` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod hetgnn;
pub mod numerics;
pub mod relation;
pub mod temporal;
pub mod training;

mod math;

pub use error::{Error, Result};
