//! Node-adaptive inference for linear-propagation graph neural networks.
//!
//! Nodes are propagated hop by hop and leave as soon as their features are
//! close enough to the closed-form stationary state of their component. Each
//! propagation order has its own classifier, trained jointly by offline and
//! online distillation so shallow exits stay accurate.

pub mod data;
pub mod distill;
pub mod engine;
pub mod error;
pub mod graph;
pub mod matrix;
pub mod metering;
pub mod pipeline;
pub mod propagation;
pub mod train;

pub use error::{NaiError, Result};
pub use matrix::{FeatureMatrix, Matrix};
