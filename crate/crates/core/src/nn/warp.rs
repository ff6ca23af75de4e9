//! Differentiable backward warping.
//!
//! `warp(x, f)(p) = x(p + f(p))` sampled bilinearly, with sample positions
//! clamped to the frame (border replication). Flow channel 0 is the
//! horizontal displacement, channel 1 the vertical one, both in pixels.

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp2, DType, Layout, Shape, Tensor};

use crate::error::{Error, Result};

struct Warp;

#[derive(Clone, Copy)]
struct Dims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
}

fn dims_of(x: &Shape, f: &Shape) -> candle_core::Result<Dims> {
    let (n, c, h, w) = x.dims4()?;
    let (fn_, fc, fh, fw) = f.dims4()?;
    if fn_ != n || fc != 2 || fh != h || fw != w {
        candle_core::bail!("warp: flow {f:?} does not match input {x:?}");
    }
    Ok(Dims { n, c, h, w })
}

fn as_f64(s: &CpuStorage, l: &Layout) -> candle_core::Result<Vec<f64>> {
    let (a, b) = l
        .contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg("warp expects contiguous inputs".into()))?;
    Ok(match s {
        CpuStorage::F32(v) => v[a..b].iter().map(|&x| x as f64).collect(),
        CpuStorage::F64(v) => v[a..b].to_vec(),
        _ => candle_core::bail!("warp supports f32 and f64"),
    })
}

/// Sampling geometry of one output pixel along one axis.
#[derive(Clone, Copy)]
struct Axis {
    i0: usize,
    i1: usize,
    frac: f64,
    /// d(clamped position)/d(displacement): 0 where the clamp is active.
    slope: f64,
}

#[inline]
fn axis(base: usize, disp: f64, len: usize) -> Axis {
    let p = base as f64 + disp;
    let max = (len - 1) as f64;
    let (pc, slope) = if p <= 0.0 {
        (0.0, 0.0)
    } else if p >= max {
        (max, 0.0)
    } else {
        (p, 1.0)
    };
    let i0 = pc.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    Axis {
        i0,
        i1,
        frac: pc - i0 as f64,
        slope,
    }
}

fn forward(x: &[f64], f: &[f64], d: Dims) -> Vec<f64> {
    let plane = d.h * d.w;
    let mut out = vec![0.0; x.len()];
    for n in 0..d.n {
        let fu = &f[(2 * n) * plane..(2 * n + 1) * plane];
        let fv = &f[(2 * n + 1) * plane..(2 * n + 2) * plane];
        for i in 0..d.h {
            for j in 0..d.w {
                let k = i * d.w + j;
                let ax = axis(j, fu[k], d.w);
                let ay = axis(i, fv[k], d.h);
                for c in 0..d.c {
                    let src = &x[(n * d.c + c) * plane..(n * d.c + c + 1) * plane];
                    let top = (1.0 - ax.frac) * src[ay.i0 * d.w + ax.i0] + ax.frac * src[ay.i0 * d.w + ax.i1];
                    let bot = (1.0 - ax.frac) * src[ay.i1 * d.w + ax.i0] + ax.frac * src[ay.i1 * d.w + ax.i1];
                    out[(n * d.c + c) * plane + k] = (1.0 - ay.frac) * top + ay.frac * bot;
                }
            }
        }
    }
    out
}

fn backward(x: &[f64], f: &[f64], g: &[f64], d: Dims) -> (Vec<f64>, Vec<f64>) {
    let plane = d.h * d.w;
    let mut gx = vec![0.0; x.len()];
    let mut gf = vec![0.0; f.len()];
    for n in 0..d.n {
        for i in 0..d.h {
            for j in 0..d.w {
                let k = i * d.w + j;
                let ax = axis(j, f[(2 * n) * plane + k], d.w);
                let ay = axis(i, f[(2 * n + 1) * plane + k], d.h);
                let (mut du, mut dv) = (0.0, 0.0);
                for c in 0..d.c {
                    let base = (n * d.c + c) * plane;
                    let go = g[base + k];
                    let src = &x[base..base + plane];
                    let p00 = src[ay.i0 * d.w + ax.i0];
                    let p01 = src[ay.i0 * d.w + ax.i1];
                    let p10 = src[ay.i1 * d.w + ax.i0];
                    let p11 = src[ay.i1 * d.w + ax.i1];
                    du += go * ((1.0 - ay.frac) * (p01 - p00) + ay.frac * (p11 - p10));
                    dv += go * ((1.0 - ax.frac) * (p10 - p00) + ax.frac * (p11 - p01));
                    let gsrc = &mut gx[base..base + plane];
                    gsrc[ay.i0 * d.w + ax.i0] += go * (1.0 - ay.frac) * (1.0 - ax.frac);
                    gsrc[ay.i0 * d.w + ax.i1] += go * (1.0 - ay.frac) * ax.frac;
                    gsrc[ay.i1 * d.w + ax.i0] += go * ay.frac * (1.0 - ax.frac);
                    gsrc[ay.i1 * d.w + ax.i1] += go * ay.frac * ax.frac;
                }
                gf[(2 * n) * plane + k] = du * ax.slope;
                gf[(2 * n + 1) * plane + k] = dv * ay.slope;
            }
        }
    }
    (gx, gf)
}

fn storage(data: Vec<f64>, dtype: DType) -> candle_core::Result<CpuStorage> {
    Ok(match dtype {
        DType::F32 => CpuStorage::F32(data.into_iter().map(|v| v as f32).collect()),
        DType::F64 => CpuStorage::F64(data),
        other => candle_core::bail!("warp does not support {other:?}"),
    })
}

fn host_f64(t: &Tensor) -> candle_core::Result<Vec<f64>> {
    t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()
}

impl CustomOp2 for Warp {
    fn name(&self) -> &'static str {
        "backward-warp"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let d = dims_of(l1.shape(), l2.shape())?;
        let out = forward(&as_f64(s1, l1)?, &as_f64(s2, l2)?, d);
        Ok((storage(out, s1.dtype())?, l1.shape().clone()))
    }

    fn bwd(
        &self,
        x: &Tensor,
        f: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let d = dims_of(x.shape(), f.shape())?;
        let (gx, gf) = backward(&host_f64(x)?, &host_f64(f)?, &host_f64(grad)?, d);
        let gx = Tensor::from_vec(gx, x.shape(), x.device())?.to_dtype(x.dtype())?;
        let gf = Tensor::from_vec(gf, f.shape(), f.device())?.to_dtype(f.dtype())?;
        Ok((Some(gx), Some(gf)))
    }
}

/// Warps `x` (N, C, H, W) with `flow` (N, 2, H, W).
pub fn warp(x: &Tensor, flow: &Tensor) -> Result<Tensor> {
    dims_of(x.shape(), flow.shape()).map_err(|e| Error::Shape(e.to_string()))?;
    let flow = flow.to_dtype(x.dtype())?;
    Ok(x.contiguous()?.apply_op2(&flow.contiguous()?, Warp)?)
}
