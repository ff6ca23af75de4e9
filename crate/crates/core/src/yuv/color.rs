//! Colour conversion and chroma resampling.
//!
//! BT.601 full-range coefficients. Chroma is downsampled with a 2x2 box filter
//! and upsampled bilinearly with samples centred between luma pairs.

use super::frame::{Frame420, Frame444, Plane};
use crate::error::{Error, Result};

pub const COLOR_MATRIX: &str = "bt601-full";

/// Interleaved RGB image with samples in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Dimension(format!(
                "rgb {width}x{height} needs {} samples, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        RgbImage {
            width,
            height,
            data: rgb.iter().copied().cycle().take(width * height * 3).collect(),
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

#[inline]
pub fn rgb_to_yuv(r: f32, g: f32, b: f32) -> [f32; 3] {
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let u = -0.168_736 * r - 0.331_264 * g + 0.5 * b + 0.5;
    let v = 0.5 * r - 0.418_688 * g - 0.081_312 * b + 0.5;
    [y, u, v]
}

#[inline]
pub fn yuv_to_rgb(y: f32, u: f32, v: f32) -> [f32; 3] {
    let (cb, cr) = (u - 0.5, v - 0.5);
    [
        y + 1.402 * cr,
        y - 0.344_136 * cb - 0.714_136 * cr,
        y + 1.772 * cb,
    ]
}

pub fn rgb_to_yuv420(img: &RgbImage) -> Result<Frame420> {
    let (w, h) = (img.width, img.height);
    if w % 2 != 0 || h % 2 != 0 {
        return Err(Error::Dimension(format!("rgb image {w}x{h} must have even sides")));
    }
    let mut y = Plane::zeros(w, h);
    let mut u_full = Plane::zeros(w, h);
    let mut v_full = Plane::zeros(w, h);
    for j in 0..h {
        for i in 0..w {
            let [r, g, b] = img.pixel(i, j);
            let [yy, uu, vv] = rgb_to_yuv(r, g, b);
            y.set(i, j, yy.clamp(0.0, 1.0));
            u_full.set(i, j, uu);
            v_full.set(i, j, vv);
        }
    }
    Frame420::new(
        y,
        box_downsample(&u_full)?.clamp01(),
        box_downsample(&v_full)?.clamp01(),
    )
}

pub fn yuv420_to_rgb(frame: &Frame420) -> RgbImage {
    let u = bilinear_upsample(&frame.u);
    let v = bilinear_upsample(&frame.v);
    let (w, h) = (frame.width(), frame.height());
    let mut data = Vec::with_capacity(w * h * 3);
    for j in 0..h {
        for i in 0..w {
            let rgb = yuv_to_rgb(frame.y.get(i, j), u.get(i, j), v.get(i, j));
            data.extend(rgb.iter().map(|c| c.clamp(0.0, 1.0)));
        }
    }
    RgbImage {
        width: w,
        height: h,
        data,
    }
}

/// Mean of each 2x2 block.
pub fn box_downsample(p: &Plane) -> Result<Plane> {
    let (w, h) = p.dims();
    if w % 2 != 0 || h % 2 != 0 {
        return Err(Error::Dimension(format!("plane {w}x{h} must have even sides")));
    }
    Ok(Plane::from_fn(w / 2, h / 2, |x, y| {
        0.25 * (p.get(2 * x, 2 * y)
            + p.get(2 * x + 1, 2 * y)
            + p.get(2 * x, 2 * y + 1)
            + p.get(2 * x + 1, 2 * y + 1))
    }))
}

/// Doubles the resolution with bilinear weights (0.75, 0.25); edges clamp.
pub fn bilinear_upsample(p: &Plane) -> Plane {
    let (w, h) = p.dims();
    Plane::from_fn(w * 2, h * 2, |x, y| {
        // Output sample x sits at source coordinate (x + 0.5) / 2 - 0.5.
        let (x0, fx) = if x % 2 == 0 {
            (x as isize / 2 - 1, 0.75f32)
        } else {
            (x as isize / 2, 0.25f32)
        };
        let (y0, fy) = if y % 2 == 0 {
            (y as isize / 2 - 1, 0.75f32)
        } else {
            (y as isize / 2, 0.25f32)
        };
        let a = p.get_clamped(x0, y0);
        let b = p.get_clamped(x0 + 1, y0);
        let c = p.get_clamped(x0, y0 + 1);
        let d = p.get_clamped(x0 + 1, y0 + 1);
        (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * c + fx * d)
    })
}

pub fn to_444(frame: &Frame420) -> Frame444 {
    Frame444 {
        y: frame.y.clone(),
        u: bilinear_upsample(&frame.u),
        v: bilinear_upsample(&frame.v),
    }
}

/// Rearranges a plane into four half-resolution channels ordered
/// (even row, even col), (even, odd), (odd, even), (odd, odd).
pub fn space_to_depth(p: &Plane) -> Result<[Plane; 4]> {
    let (w, h) = p.dims();
    if w % 2 != 0 || h % 2 != 0 {
        return Err(Error::Dimension(format!("plane {w}x{h} must have even sides")));
    }
    let ch = |dy: usize, dx: usize| Plane::from_fn(w / 2, h / 2, |x, y| p.get(2 * x + dx, 2 * y + dy));
    Ok([ch(0, 0), ch(0, 1), ch(1, 0), ch(1, 1)])
}

pub fn depth_to_space(chs: &[Plane; 4]) -> Result<Plane> {
    let (w, h) = chs[0].dims();
    if chs.iter().any(|c| c.dims() != (w, h)) {
        return Err(Error::Dimension("space-to-depth channels differ in size".into()));
    }
    Ok(Plane::from_fn(w * 2, h * 2, |x, y| {
        chs[(y % 2) * 2 + x % 2].get(x / 2, y / 2)
    }))
}
