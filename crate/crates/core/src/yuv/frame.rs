use crate::error::{Error, Result};

/// A single image plane with samples normalized to `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Plane {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Plane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "plane {width}x{height} needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Plane {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Sample with coordinates clamped to the plane border.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp01(&self) -> Plane {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Crop the top-left `width`x`height` region.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Plane> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::Dimension(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        Ok(Plane::from_fn(width, height, |x, y| self.get(x0 + x, y0 + y)))
    }

    /// Extend to `width`x`height` by replicating the right and bottom borders.
    pub fn pad_replicate(&self, width: usize, height: usize) -> Plane {
        Plane::from_fn(width, height, |x, y| {
            self.get(x.min(self.width - 1), y.min(self.height - 1))
        })
    }

    pub fn mse(&self, other: &Plane) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(Error::Dimension(format!(
                "plane {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum();
        Ok(sum / self.data.len() as f64)
    }

    /// Round-trip through 8-bit code values.
    pub fn quantize_8bit(&self) -> Plane {
        self.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Plane> {
        Plane::from_vec(
            width,
            height,
            bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        )
    }
}

/// One frame of 4:2:0 video: full-resolution luma and half-resolution chroma.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame420 {
    pub y: Plane,
    pub u: Plane,
    pub v: Plane,
    pub bit_depth: u8,
}

impl Frame420 {
    pub fn new(y: Plane, u: Plane, v: Plane) -> Result<Self> {
        let (w, h) = y.dims();
        if w % 2 != 0 || h % 2 != 0 {
            return Err(Error::Dimension(format!("luma {w}x{h} must be even")));
        }
        for (name, p) in [("u", &u), ("v", &v)] {
            if p.dims() != (w / 2, h / 2) {
                return Err(Error::Dimension(format!(
                    "{name} plane is {}x{}, expected {}x{}",
                    p.width(),
                    p.height(),
                    w / 2,
                    h / 2
                )));
            }
        }
        Ok(Frame420 { y, u, v, bit_depth: 8 })
    }

    /// A flat frame with the given Y/U/V values.
    pub fn constant(width: usize, height: usize, y: f32, u: f32, v: f32) -> Result<Self> {
        Frame420::new(
            Plane::filled(width, height, y),
            Plane::filled(width / 2, height / 2, u),
            Plane::filled(width / 2, height / 2, v),
        )
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.y.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.y.height()
    }

    pub fn quantize_8bit(&self) -> Frame420 {
        Frame420 {
            y: self.y.quantize_8bit(),
            u: self.u.quantize_8bit(),
            v: self.v.quantize_8bit(),
            bit_depth: self.bit_depth,
        }
    }

    /// Replicate-pad to the given luma size (must be even).
    pub fn pad_to(&self, width: usize, height: usize) -> Result<Frame420> {
        if width < self.width() || height < self.height() || width % 2 != 0 || height % 2 != 0 {
            return Err(Error::Dimension(format!(
                "cannot pad {}x{} to {width}x{height}",
                self.width(),
                self.height()
            )));
        }
        Frame420::new(
            self.y.pad_replicate(width, height),
            self.u.pad_replicate(width / 2, height / 2),
            self.v.pad_replicate(width / 2, height / 2),
        )
    }

    pub fn crop_to(&self, width: usize, height: usize) -> Result<Frame420> {
        Frame420::new(
            self.y.crop(0, 0, width, height)?,
            self.u.crop(0, 0, width / 2, height / 2)?,
            self.v.crop(0, 0, width / 2, height / 2)?,
        )
    }
}

/// Three co-sited full-resolution planes.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame444 {
    pub y: Plane,
    pub u: Plane,
    pub v: Plane,
}

impl Frame444 {
    pub fn new(y: Plane, u: Plane, v: Plane) -> Result<Self> {
        if y.dims() != u.dims() || y.dims() != v.dims() {
            return Err(Error::Dimension(
                "4:4:4 planes must share one resolution".into(),
            ));
        }
        Ok(Frame444 { y, u, v })
    }

    pub fn width(&self) -> usize {
        self.y.width()
    }

    pub fn height(&self) -> usize {
        self.y.height()
    }
}
