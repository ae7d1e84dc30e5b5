//! Compression of trained convolutional networks by low-rank approximation
//! of their (nonlinear) responses.
//!
//! The crate is a stack of small modules:
//!
//! - [`numerics`]: dense eig/SVD kernels and the reduced-rank regression solver
//! - [`model`]: a minimal CNN — forward pass, toy training, serialization,
//!   and the conv-layer replacement surgery
//! - [`sampler`]: response matrices collected at sampled feature-map positions
//! - [`approx`]: the linear, nonlinear and asymmetric reconstruction solvers
//! - [`rank_select`]: PCA energy spectra and greedy whole-model rank allocation
//! - [`pipeline`]: sequential whole-model compression, evaluation, benchmarking

pub mod approx;
pub mod error;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod rank_select;
pub mod sampler;

pub use error::{Error, Result};
