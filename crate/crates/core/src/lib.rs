//! Simulation and reconstruction core for overlapping-echo detachment (OLED)
//! T2 mapping: phantoms, the three-echo forward model, k-space filtering,
//! the variational detachment solver, evaluation metrics and the OIMG
//! image container.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases at
//! the bottom of this file name the common instantiations.

pub mod detach;
pub mod error;
pub mod evalrep;
pub mod grid;
pub mod kspace;
pub mod oimg;
pub mod phantom;
pub mod rng;
pub mod scalar;
pub mod seqsim;

pub use error::{Error, Result};
pub use grid::{ComplexImage, Domain, GridSpec, Raster};
pub use phantom::TissueMap;
pub use scalar::Real;
pub use seqsim::SequenceParams;

pub use num_complex::Complex;

pub type ComplexImageF32 = ComplexImage<f32>;
pub type ComplexImageF64 = ComplexImage<f64>;
pub type RasterF32 = Raster<f32>;
pub type RasterF64 = Raster<f64>;
pub type TissueMapF32 = TissueMap<f32>;
pub type TissueMapF64 = TissueMap<f64>;
pub type DetachResultF64 = detach::DetachResult<f64>;
