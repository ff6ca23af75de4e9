//! Headerless planar 8-bit I420 files.

use super::frame::{Frame420, Plane};
use crate::error::{Error, Result};

pub fn read_raw_yuv(
    bytes: &[u8],
    width: usize,
    height: usize,
    frame_count: Option<usize>,
) -> Result<Vec<Frame420>> {
    if width % 2 != 0 || height % 2 != 0 || width == 0 || height == 0 {
        return Err(Error::Dimension(format!("{width}x{height} is not a 4:2:0 size")));
    }
    let frame_len = width * height * 3 / 2;
    let available = bytes.len() / frame_len;
    if bytes.len() % frame_len != 0 {
        return Err(Error::Truncated(format!(
            "{} trailing bytes after {available} frames",
            bytes.len() % frame_len
        )));
    }
    let count = match frame_count {
        Some(n) if n > available => {
            return Err(Error::Truncated(format!(
                "requested {n} frames, file holds {available}"
            )))
        }
        Some(n) => n,
        None => available,
    };
    (0..count)
        .map(|i| {
            let f = &bytes[i * frame_len..(i + 1) * frame_len];
            let (yb, rest) = f.split_at(width * height);
            let (ub, vb) = rest.split_at(width * height / 4);
            Frame420::new(
                Plane::from_u8(width, height, yb)?,
                Plane::from_u8(width / 2, height / 2, ub)?,
                Plane::from_u8(width / 2, height / 2, vb)?,
            )
        })
        .collect()
}

pub fn write_raw_yuv(frames: &[Frame420]) -> Vec<u8> {
    let mut out = Vec::new();
    for f in frames {
        out.extend(f.y.to_u8());
        out.extend(f.u.to_u8());
        out.extend(f.v.to_u8());
    }
    out
}
