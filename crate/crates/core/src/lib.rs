#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod densify;
pub mod error;
pub mod gaussian;
pub mod image;
pub mod loss;
pub mod math;
pub mod metrics;
pub mod nn;
mod par;
pub mod pipeline;
pub mod raster;
pub mod robust;

pub use error::{Error, Result};
pub use gaussian::{Camera, Gaussian, GaussianCloud};
pub use image::ImageBuffer;
