//! Frame containers, file I/O, colour conversion and quality metrics.

pub mod color;
pub mod frame;
pub mod metrics;
pub mod raw;
pub mod y4m;

pub use color::{
    bilinear_upsample, box_downsample, depth_to_space, rgb_to_yuv420, space_to_depth, to_444,
    yuv420_to_rgb, RgbImage,
};
pub use frame::{Frame420, Frame444, Plane};
pub use metrics::{psnr_yuv, weighted_psnr_yuv, PlanePsnr, YuvPsnr, PSNR_CAP_DB};
pub use raw::{read_raw_yuv, write_raw_yuv};
pub use y4m::{read_y4m, write_y4m, write_y4m_bytes, Y4mHeader, Y4mReader};
