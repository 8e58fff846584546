//! Day-ahead load forecasting from geo-distributed meteorological factors.
//!
//! A graph convolutional generator learns a representation of weather
//! collected at many locations; it is trained jointly with a dense
//! forecaster. A Shapley-value explainer (exact enumeration and an
//! accelerated kernel-regression approximation) scores the importance of
//! each weather-collection location.

pub mod bench;
pub mod config;
pub mod data;
pub mod error;
pub mod explain;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod nn;

pub use error::{Error, Result};
