//! Non-parametric deep clustering: an autoencoder embedding trained with a
//! robust pairwise loss over a mutual-kNN graph, alternating between a
//! clustering representation, the network and a dual variable, with clusters
//! read off as connected components of the thresholded graph.

pub mod admm;
mod binio;
pub mod config;
pub mod constraints;
pub mod data;
pub mod error;
pub mod extract;
pub mod graph;
pub mod metrics;
pub mod nn;
pub mod penalty;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
