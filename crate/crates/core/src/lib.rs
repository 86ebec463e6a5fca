//! Demographic-aware modelling of annotator disagreement.

pub mod dataset;
pub mod metrics;
pub mod network;
pub mod objective;
pub mod training;
