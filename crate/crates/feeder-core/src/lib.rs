//! Reduce a detailed radial distribution feeder (hundreds of nodes with
//! lateral loads) into a validated three-segment feeder/load model, then
//! simulate fault scenarios on the reduced model with contactor and
//! single-phase induction motor stall dynamics.
//!
//! The pipeline runs ingest -> topology -> powerflow -> reduction ->
//! dynamics; `fixtures` generates deterministic synthetic datasets matching
//! published feeder statistics for testing and calibration.

pub mod dynamics;
pub mod fixtures;
pub mod ingest;
pub mod model;
pub mod powerflow;
pub mod reduction;
pub mod topology;
