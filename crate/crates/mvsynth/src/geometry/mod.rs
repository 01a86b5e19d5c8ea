//! Pinhole camera model, camera-type trajectory synthesis and z-buffered
//! reprojection with visibility masks.

mod camera;
mod splat;

pub use camera::*;
pub use splat::*;
