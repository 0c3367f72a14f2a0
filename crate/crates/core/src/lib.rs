//! Synthetic relightable training data and self-supervised training of an
//! illumination-robust keypoint detector and descriptor.
//!
//! The pipeline runs: procedural Gaussian-point objects ([`scene`]) →
//! feature sets from homography adaptation and depth lifting ([`dataset`]) →
//! randomly composed scenes → renders under swept illumination ([`render`]) →
//! grouped images with cell-encoded keypoint labels → training of the
//! extractor ([`model`], [`losses`], [`training`]) → metrics ([`eval`]).

pub mod dataset;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod raster;
pub mod render;
pub mod scene;
pub mod tensor;
pub mod training;
