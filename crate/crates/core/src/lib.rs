//! Semantic segmentation of vector sketches with a two-branch graph
//! convolutional network.
//!
//! The pipeline runs strokes through [`sketch`] preprocessing (canvas
//! normalization, polyline simplification, resampling), builds chain and
//! dilated-KNN graphs in [`graph`], and labels every point with the
//! [`model`] network. [`training`] and [`evaluation`] wrap the model in
//! the usual loops, and [`synth`] produces labeled data from edge maps or
//! parametric toy shapes.

pub mod error;
pub mod evaluation;
pub mod graph;
pub mod model;
pub mod numerics;
pub mod sketch;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
