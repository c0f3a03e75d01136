//! Layer-wise brain alignment and representation probing for speech models.
//!
//! The crate pairs snippet-rate model features with fMRI responses
//! ([`pairing`]), fits voxelwise ridge encoding models ([`encoding`]),
//! normalizes held-out correlations by a noise ceiling and aggregates them
//! over brain regions ([`ceiling`]), runs linear probes on clip-level
//! representations ([`probing`], with MFCC targets from [`acoustic`]) and
//! summarizes everything as layer-wise curves with trend labels
//! ([`report`]).
//!
//! Numerical kernels are generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, which is what every loader and
//! the command-line pipeline use.

pub mod acoustic;
pub mod ceiling;
pub mod corpus;
pub mod encoding;
pub mod error;
pub mod model;
pub mod npy;
pub mod pairing;
pub mod probing;
pub mod report;
pub mod scalar;
pub mod seed;

pub use error::{Error, Result};
pub use scalar::Real;

/// Per-layer model representations in `f64`.
pub type FeatureMatrix = model::Features<f64>;
/// TR × voxel fMRI responses in `f64`.
pub type ResponseMatrix = model::Responses<f64>;
/// Per-voxel alignment for one (model, layer, participant) in `f64`.
pub type EncodingResult = model::Encoding<f64>;
/// Fitted voxelwise ridge model in `f64`.
pub type RidgeModel = encoding::ridge::Ridge<f64>;
/// Probe dataset in `f64`.
pub type ProbeDataset = probing::Dataset<f64>;
/// Single-precision feature matrix.
pub type FeatureMatrix32 = model::Features<f32>;
/// Single-precision ridge model.
pub type RidgeModel32 = encoding::ridge::Ridge<f32>;
