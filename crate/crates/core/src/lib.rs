//! Blind quality enhancement for compressed video.
//!
//! A degradation encoder estimates how strongly each frame was compressed;
//! the enhancement network runs only as many artifact-reduction stages as
//! that estimate calls for.

pub mod checkpoint;
pub mod codec;
pub mod data;
pub mod drl;
mod error;
pub mod eval;
pub mod losses;
pub mod net;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
