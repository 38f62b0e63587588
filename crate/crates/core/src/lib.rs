//! Hierarchically decomposed graph convolution for skeleton action recognition.

pub mod error;
pub mod graph;
pub mod topology;
pub mod training;

pub use error::{HdError, Result};
pub mod aha;
pub mod data;
pub mod edgeconv;
pub mod ensemble;
pub mod hdgc;
pub mod layers;
pub mod network;
pub mod gradcheck;
