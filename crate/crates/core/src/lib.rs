//! Microphone-type classification for photoacoustic measurement chains.
//!
//! The pipeline synthesizes electret-microphone frequency responses from an
//! analytic filter cascade, builds a labeled amplitude/phase dataset over a
//! parameter grid, and trains a small tanh perceptron (written from scratch,
//! double precision, Adam) to tell the three microphone types apart.
//!
//! Modules, bottom-up:
//!
//! - [`response`]: transfer-function evaluation and frequency grids
//! - [`dataset`]: parameter grids, synthesis, normalization, splitting
//! - [`persist`]: dataset CSV + JSON sidecar
//! - [`mlp`]: the network, loss, backpropagation and Adam
//! - [`train`]: epoch loop, metrics, checkpoints
//! - [`eval`]: accuracy tables, off-grid tests, latency, curve export
//! - [`cli`]: the `pamicnet` command

pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod mlp;
pub mod persist;
pub mod response;
pub mod train;

pub use error::{Error, Result};
