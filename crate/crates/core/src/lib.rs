//! Visible light positioning with Cam-shift lamp tracking and an unscented
//! Kalman filter, plus a rolling-shutter scene simulator to test it against.

pub mod bench;
pub mod camshift;
pub mod config;
pub mod detector;
pub mod error;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod scene_sim;
pub mod ukf;

pub use error::{Error, Result};
