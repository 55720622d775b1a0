//! Imputation of missing values in multivariate time series.
//!
//! The flagship model is a pair of direction-specific recurrent generators
//! (decay-aware double GRU cells fed by self- and temporal attention) trained
//! adversarially against a per-element GRU discriminator, with an optional
//! inference-time search over the input noise. Around it sit the data
//! pipeline (masking, time lags, windowing, normalization, holdouts), simple
//! baselines (mean / previous-value / k-nearest-windows), direct and
//! downstream evaluation harnesses, an ablation runner, and synthetic data
//! generators that make end-to-end runs cheap enough for CI.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod eval;
pub mod generator;
pub mod inference;
pub mod model;
pub mod optim;
pub mod par;
pub mod seed;
pub mod synthetic;
pub mod tape;
pub mod training;

pub use error::{Error, Result};
