//! Files, formats, experiments and the command-line front end of the
//! sparse-view super-resolution splatting pipeline.

pub mod cameras;
pub mod config_io;
pub mod error;
pub mod experiments;
pub mod image_io;
pub mod nets;
pub mod ply;
pub mod run;

pub use error::{Error, Result};
