//! Hierarchically sparse recovery and restricted-isometry certification.
//!
//! The crate models signals that are sparse at several nested levels: the
//! coefficient vector splits into blocks, blocks split into sub-blocks, and a
//! sparsity budget applies at every level. [`hierarchy`] describes those
//! sparsity patterns, [`projection`] projects arbitrary vectors onto them,
//! [`linop`] provides matrix-free measurement operators (dense, Kronecker,
//! tensor flips), [`hihtp`] recovers hierarchically sparse vectors from linear
//! measurements by hard-thresholding pursuit, [`certify`] measures and bounds
//! restricted-isometry constants, and [`ensembles`] draws the random matrices
//! and signals used in experiments.

pub mod certify;
pub mod ensembles;
pub mod error;
pub mod hierarchy;
pub mod hihtp;
pub mod linop;
pub mod projection;

pub use error::{Error, Result};
