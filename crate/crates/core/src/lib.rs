//! Spatial lasso analysis of charging-pool energy demand: buffer feature
//! extraction, preprocessing, regularised regression, bootstrap inference,
//! distribution fitting, demand decomposition and a synthetic world
//! generator.

pub mod decomposition;
pub mod distfit;
pub mod error;
pub mod features;
pub mod geometry;
pub mod inference;
pub mod layer;
pub mod matrix;
pub mod pipeline;
pub mod preprocess;
pub mod regression;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
