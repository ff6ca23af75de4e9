//! Patch gathering for convolutions, with a scatter-add gradient.

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
}

impl Geometry {
    fn out(&self) -> (usize, usize) {
        (self.h / self.stride, self.w / self.stride)
    }

    fn cols_shape(&self) -> Shape {
        let (oh, ow) = self.out();
        Shape::from((self.n, self.c * self.k * self.k, oh * ow))
    }

    /// Calls `f(input_index, column_index)` for every in-frame tap.
    #[inline]
    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let (oh, ow) = self.out();
        let p = (self.k / 2) as isize;
        let kk = self.k * self.k;
        for n in 0..self.n {
            for c in 0..self.c {
                let plane = (n * self.c + c) * self.h * self.w;
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let row = ((n * self.c + c) * kk + ky * self.k + kx) * oh * ow;
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as isize - p;
                            if iy < 0 || iy >= self.h as isize {
                                continue;
                            }
                            let in_row = plane + iy as usize * self.w;
                            let out_row = row + oy * ow;
                            for ox in 0..ow {
                                let ix = (ox * self.stride + kx) as isize - p;
                                if ix >= 0 && ix < self.w as isize {
                                    f(in_row + ix as usize, out_row + ox);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn slice<'a, T>(v: &'a [T], l: &Layout) -> candle_core::Result<&'a [T]> {
    let (a, b) = l
        .contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg("im2col expects contiguous input".into()))?;
    Ok(&v[a..b])
}

fn gather<T: Copy + Default>(x: &[T], g: &Geometry) -> Vec<T> {
    let mut out = vec![T::default(); g.cols_shape().elem_count()];
    g.for_each(|i, o| out[o] = x[i]);
    out
}

fn scatter<T: Copy + Default + std::ops::AddAssign>(cols: &[T], g: &Geometry) -> Vec<T> {
    let mut out = vec![T::default(); g.n * g.c * g.h * g.w];
    g.for_each(|i, o| out[i] += cols[o]);
    out
}

struct Im2col(Geometry);
struct Col2im(Geometry);

impl CustomOp1 for Im2col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let out = match s {
            CpuStorage::F32(v) => CpuStorage::F32(gather(slice(v, l)?, &self.0)),
            CpuStorage::F64(v) => CpuStorage::F64(gather(slice(v, l)?, &self.0)),
            _ => candle_core::bail!("im2col supports f32 and f64, got {:?}", s.dtype()),
        };
        Ok((out, self.0.cols_shape()))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1_no_bwd(&Col2im(self.0))?))
    }
}

impl CustomOp1 for Col2im {
    fn name(&self) -> &'static str {
        "col2im"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = &self.0;
        let out = match s {
            CpuStorage::F32(v) => CpuStorage::F32(scatter(slice(v, l)?, g)),
            CpuStorage::F64(v) => CpuStorage::F64(scatter(slice(v, l)?, g)),
            _ => candle_core::bail!("col2im supports f32 and f64, got {:?}", s.dtype()),
        };
        Ok((out, Shape::from((g.n, g.c, g.h, g.w))))
    }
}

/// Zero-padded `k x k` patches of `x` (N, C, H, W) at the given stride, as
/// (N, C*k*k, H/s * W/s) with the channel index `c*k*k + ky*k + kx`.
pub fn im2col(x: &Tensor, k: usize, stride: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if k % 2 == 0 || stride == 0 || h % stride != 0 || w % stride != 0 {
        return Err(Error::Shape(format!("im2col of {w}x{h} with kernel {k} and stride {stride}")));
    }
    let g = Geometry { n, c, h, w, k, stride };
    Ok(x.contiguous()?.apply_op1(Im2col(g))?)
}
