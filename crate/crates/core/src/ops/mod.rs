//! Tensor operations with explicit backward passes.

pub mod activation;
pub mod concat;
pub mod conv;
pub mod linear;
pub mod norm;
pub mod pool;
pub mod rescale;
