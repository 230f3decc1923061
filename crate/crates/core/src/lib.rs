//! Benign/malignant mammogram classification built from three feature
//! families: a compact convolutional network's penultimate activations,
//! gradient-orientation histograms, and local binary pattern histograms.
//! The fused vector feeds a k-nearest-neighbour, random-forest, or
//! gradient-boosted-tree classifier. Everything is CPU-only and seeded.

pub mod cvgg;
pub mod error;
pub mod features;
pub mod hog;
pub mod image;
pub mod lbp;
pub mod ml;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
