//! Volumetric tensors, the denoising and inversion networks, a synthetic
//! scene generator, training loops and evaluation metrics for 3D
//! ground-penetrating-radar inversion.
//!
//! The crate is `no_std` with `alloc`; enable `std` for float formatting
//! in error messages and `parallel` for rayon-backed convolutions.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod error;
pub mod eval;
pub mod forge;
pub mod gradcheck;
pub mod nets;
pub mod ops;
pub mod par;
pub mod params;
pub mod pipeline;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Real;
pub use tensor::Tensor;
