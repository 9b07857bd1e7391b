//! Synthetic data: scene sampling, rasterization, a point-scatterer radar
//! model, clutter and preprocessing.

pub mod clutter;
pub mod dataset;
pub mod physics;
pub mod preprocess;
pub mod raster;
pub mod scene;
