//! Learned hierarchical B-frame coding for YUV 4:2:0 video.

pub mod afmod;
pub mod codec;
pub mod entropy;
pub mod error;
pub mod eval;
pub mod flow;
pub mod gop;
pub mod motion;
pub mod nn;
pub mod train;
pub mod yuv;

pub use error::{Error, Result};
