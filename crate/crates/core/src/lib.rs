//! # soleprint
//!
//! Sex (and age) estimation from 2D footprint scans, end to end:
//!
//! - [`dataio`]: manifests, image loading, seeded train/val/test splits and
//!   composite exports for an external full-scale trainer.
//! - [`raster`]: bounding-box crop, NEAREST / BILINEAR / HAMMING / BOX
//!   resampling, letterboxing, ink morphology and three-kernel composites.
//! - [`morphometrics`]: centroid size, Procrustes superimposition, GPA,
//!   shape PCA, inter-landmark distances and thin-plate splines.
//! - [`discriminant`]: two-class LDA with resubstitution and leave-one-out
//!   accuracy.
//! - [`ridgefields`]: sampling squares between landmarks, black-pixel
//!   fractions, ridge-count features and texture-only tiles.
//! - [`neuralnet`]: a small convolutional network with hand-written
//!   backward passes, BCE / L1 / weighted multi-task loss, two-stage Adam
//!   training and Grad-CAM.
//! - [`experiments`]: the shape / texture / size scenario matrix, metrics,
//!   report tables and a synthetic two-population benchmark.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common choices. Raster pixels are always `f64`.

pub mod dataio;
pub mod discriminant;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod morphometrics;
pub mod neuralnet;
pub mod raster;
pub mod ridgefields;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type LandmarkSet64 = morphometrics::LandmarkSet<f64>;
pub type AlignedEnsemble64 = morphometrics::AlignedEnsemble<f64>;
pub type TpsWarp64 = morphometrics::TpsWarp<f64>;
pub type FeatureMatrix64 = discriminant::FeatureMatrix<f64>;
pub type LdaModel64 = discriminant::LdaModel<f64>;
pub type Matrix64 = linalg::Matrix<f64>;
/// Training precision.
pub type ConvNet32 = neuralnet::ConvNet<f32>;
/// Gradient-checking precision.
pub type ConvNet64 = neuralnet::ConvNet<f64>;
pub type Tensor32 = neuralnet::Tensor<f32>;
pub type Tensor64 = neuralnet::Tensor<f64>;
