//! Stereo spatial clustering with confidence weighting, used to bootstrap a
//! single-channel deep-clustering separator.

pub mod cli;
pub mod cluster;
pub mod confidence;
pub mod container;
pub mod dcnet;
pub mod ensemble;
pub mod experiment;
pub mod gmm;
pub mod metrics;
pub mod mixgen;
pub mod pipeline;
pub mod rng;
pub mod separation;
pub mod signal;
pub mod spatial;
