//! Learning to dispatch reactive power.
//!
//! The crate bundles an AC power-flow engine, an optimal reactive power
//! dispatch (ORPD) solver that serves as a labeling oracle, the dataset
//! pipeline around it, small neural models (fully connected and graph
//! convolutional) trained to imitate the oracle, and the evaluation harness
//! that scores them on losses, feasibility and prediction error.

pub mod batch;
pub mod datagen;
pub mod eval;
pub mod fixtures;
pub mod grid;
pub mod nn;
pub mod orpd;
pub mod pipeline;
pub mod powerflow;
