//! Forward and inverse modelling of surface emission rates.
//!
//! The forward side integrates Lagrangian stochastic particle trajectories
//! ([`dispersion`]) through a prescribed wind and turbulence field
//! ([`meteo`]) and condenses the detections into a linear source-receptor
//! operator ([`source_receptor`]). The inverse side recovers the emission
//! vector from a handful of sensor concentrations, either with a multilayer
//! perceptron trained on synthetic pairs ([`mlp`]) or by regularized least
//! squares solved with BFGS or particle swarm ([`regularized`]).
//! [`experiment`] wires the stages into a reproducible file-based pipeline.

pub mod dispersion;
pub mod error;
pub mod experiment;
pub mod meteo;
pub mod mlp;
pub mod regularized;
pub mod rng;
pub mod source_receptor;
pub mod textio;

pub use error::{Error, Result};
