//! EEG channel infilling: preprocessing, spherical-spline interpolation, and a
//! position-aware rectified-flow autoencoder that reconstructs dropped
//! channels at arbitrary electrode positions.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod montage;
pub mod noise;
pub mod sampler;
pub mod signal;
pub mod spline;
pub mod tokens;
pub mod train;

pub use error::{Error, Result};
pub use geometry::{ChannelGeometry, Recording};
