//! Soft color segmentation.
//!
//! An image and a palette of K colors go in, K RGBA layers come out. Each
//! layer carries one palette color plus per-pixel residues, and the
//! alpha-weighted sum of the layers reproduces the image.
//!
//! [`layers::decompose`] runs the two trained networks from [`models`];
//! [`unmixer`] solves the same problem per pixel by direct minimization.
//! [`trainer`] trains the networks without labels, [`metrics`] scores
//! results and [`io`] reads and writes images, palettes, weights and layer
//! directories.

pub mod bench;
pub mod error;
pub mod io;
pub mod layers;
pub mod metrics;
pub mod models;
pub mod palette;
pub mod raster;
pub mod tensor;
pub mod trainer;
pub mod unmixer;

pub use error::{Error, Result};
