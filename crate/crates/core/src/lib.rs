//! Rolling-shutter radiance fields, desk scale.
//!
//! Jointly optimizes a continuous-time SE(3) camera trajectory (cumulative
//! cubic B-spline) and a differentiable radiance field against rolling-shutter
//! images by modeling the row-by-row capture process, then renders undistorted
//! global-shutter views and evaluates trajectory/image quality.

pub mod camera;
pub mod error;
pub mod field;
pub mod io;
pub mod lie;
pub mod metrics;
pub mod renderer;
pub mod synthgen;
pub mod train;
pub mod trajectory;

pub use error::{Error, Result};
