//! GISNet: graph-based information sharing network for vehicle trajectory
//! prediction.
//!
//! The crate is organized around the model's data flow. Every vehicle's
//! 3-second history is embedded by a shared-weight LSTM ([`encoder`]); the
//! embeddings are placed into a 13x3 occupancy grid and pooled by a small
//! convolutional stack ([`social`]); a two-layer graph convolution over a
//! star-shaped scene graph shares information between the target and its
//! neighbors ([`graph`]); the three features are fused and decoded into a
//! 5-second trajectory by an LSTM decoder ([`decoder`]). Everything is
//! differentiable through the reverse-mode tape in [`autodiff`], and
//! [`train`] ties it together with Adam, RMSE evaluation and a
//! constant-velocity Kalman baseline. [`data`] handles NGSIM-format CSV
//! ingestion, synthetic scenario generation and the on-disk dataset cache.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod social;
pub mod train;

pub use config::RunConfig;
pub use error::{Error, Result};
