//! Small neural network toolkit on top of candle tensors (NCHW layout).

pub mod im2col;
pub mod params;
pub mod warp;

use candle_core::{DType, Device, Tensor, D};

pub use im2col::im2col;
pub use params::{Init, ParamStore, Scope};
pub use warp::warp;

use crate::error::{Error, Result};
use crate::yuv::Plane;

pub const LEAKY_SLOPE: f64 = 0.1;

/// 2-D convolution with "same" padding for odd kernels.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv {
    pub fn new(scope: &Scope, cin: usize, cout: usize, k: usize, stride: usize) -> Result<Self> {
        Self::with_init(scope, cin, cout, k, stride, Init::He(cin * k * k))
    }

    /// Convolution whose weights and bias start at zero.
    pub fn zeroed(scope: &Scope, cin: usize, cout: usize, k: usize, stride: usize) -> Result<Self> {
        Self::with_init(scope, cin, cout, k, stride, Init::Zeros)
    }

    fn with_init(scope: &Scope, cin: usize, cout: usize, k: usize, stride: usize, init: Init) -> Result<Self> {
        if k % 2 == 0 {
            return Err(Error::Config(format!("kernel size {k} must be odd")));
        }
        Ok(Conv {
            weight: scope.get((cout, cin, k, k), "weight", init)?,
            bias: scope.get(cout, "bias", Init::Zeros)?,
            stride,
            in_channels: cin,
            out_channels: cout,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = x.dim(1)?;
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let y = conv2d_same(x, &self.weight, self.stride)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, self.out_channels, 1, 1))?)?)
    }
}

/// Zero-padded "same" convolution for odd kernels and stride 1 or 2, as a
/// patch gather and one matrix product.
pub fn conv2d_same(x: &Tensor, weight: &Tensor, stride: usize) -> Result<Tensor> {
    let (n, cin, h, w) = x.dims4()?;
    let (cout, wcin, k, k2) = weight.dims4()?;
    if wcin != cin || k != k2 || k % 2 == 0 || !(stride == 1 || stride == 2) {
        return Err(Error::Shape(format!(
            "conv of {cin} channels with kernel {:?} and stride {stride}",
            weight.dims()
        )));
    }
    if stride == 2 && (h % 2 != 0 || w % 2 != 0) {
        return Err(Error::Shape(format!("stride-2 conv needs even sides, got {w}x{h}")));
    }
    let (oh, ow) = (h / stride, w / stride);
    let cols = im2col(x, k, stride)?;
    let wm = weight.reshape((cout, cin * k * k))?;
    Ok(wm.broadcast_matmul(&cols)?.reshape((n, cout, oh, ow))?)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(scope: &Scope, cin: usize, cout: usize) -> Result<Self> {
        Ok(Linear {
            weight: scope.get((cout, cin), "weight", Init::He(cin))?,
            bias: scope.get(cout, "bias", Init::Zeros)?,
        })
    }

    pub fn zeroed(scope: &Scope, cin: usize, cout: usize) -> Result<Self> {
        Ok(Linear {
            weight: scope.get((cout, cin), "weight", Init::Zeros)?,
            bias: scope.get(cout, "bias", Init::Zeros)?,
        })
    }

    /// `x` is (N, in).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

pub fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::leaky_relu(x, LEAKY_SLOPE)?)
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((x.relu()? + tail)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

pub fn upsample2(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    Ok(x.upsample_nearest2d(2 * h, 2 * w)?)
}

pub fn downsample2(x: &Tensor) -> Result<Tensor> {
    Ok(x.avg_pool2d(2)?)
}

/// Global average pool: (N, C, H, W) -> (N, C).
pub fn global_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean_keepdim(D::Minus1)?.mean_keepdim(D::Minus2)?.flatten_from(1)?)
}

pub fn cat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    Ok(Tensor::cat(parts, 1)?)
}

/// Stacks equally sized planes into a (1, C, H, W) tensor.
pub fn planes_to_tensor(planes: &[&Plane], device: &Device) -> Result<Tensor> {
    let (w, h) = planes
        .first()
        .ok_or_else(|| Error::Shape("no planes to stack".into()))?
        .dims();
    let mut data = Vec::with_capacity(planes.len() * w * h);
    for p in planes {
        if p.dims() != (w, h) {
            return Err(Error::Dimension(format!(
                "plane {:?} differs from {:?}",
                p.dims(),
                (w, h)
            )));
        }
        data.extend_from_slice(p.data());
    }
    Ok(Tensor::from_vec(data, (1, planes.len(), h, w), device)?)
}

/// Splits sample `n` of a (N, C, H, W) tensor into planes.
pub fn tensor_to_planes(t: &Tensor, n: usize) -> Result<Vec<Plane>> {
    let (_, c, h, w) = t.dims4()?;
    let data = t.get(n)?.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    (0..c)
        .map(|i| Plane::from_vec(w, h, data[i * w * h..(i + 1) * w * h].to_vec()))
        .collect()
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gathered_conv_matches_direct_convolution() {
        let store = ParamStore::new(5, DType::F64);
        let d = Device::Cpu;
        for (k, stride) in [(1, 1), (3, 1), (3, 2), (5, 2), (5, 1)] {
            let w = store.root().get((4, 3, k, k), &format!("w{k}{stride}"), Init::He(27)).unwrap();
            let x = Tensor::randn(0.0, 1.0, (2, 3, 8, 6), &d).unwrap();
            let a = conv2d_same(&x, &w, stride).unwrap();
            let b = x.conv2d(&w, k / 2, stride, 1, 1).unwrap();
            let diff = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
            assert!(diff < 1e-12, "k {k} stride {stride}: {diff}");
        }
    }

    #[test]
    fn gathered_conv_gradients_match_direct_convolution() {
        let store = ParamStore::new(6, DType::F64);
        let w = store.root().get((2, 3, 3, 3), "w", Init::He(27)).unwrap();
        let xv = candle_core::Var::from_tensor(&Tensor::randn(0.0, 1.0, (1, 3, 6, 4), &Device::Cpu).unwrap()).unwrap();
        let x = xv.as_tensor();
        for stride in [1, 2] {
            let ga = conv2d_same(x, &w, stride).unwrap().sqr().unwrap().sum_all().unwrap().backward().unwrap();
            let gb = x.conv2d(&w, 1, stride, 1, 1).unwrap().sqr().unwrap().sum_all().unwrap().backward().unwrap();
            for t in [x, &w] {
                let d = (ga.get(t).unwrap() - gb.get(t).unwrap()).unwrap().abs().unwrap().max_all().unwrap();
                assert!(d.to_scalar::<f64>().unwrap() < 1e-10);
            }
        }
    }

    #[test]
    fn conv_keeps_size_and_strides() {
        let store = ParamStore::new(0, DType::F32);
        let c1 = Conv::new(&store.root().pp("a"), 3, 5, 3, 1).unwrap();
        let c2 = Conv::new(&store.root().pp("b"), 5, 4, 5, 2).unwrap();
        let x = Tensor::ones((2, 3, 8, 6), DType::F32, &Device::Cpu).unwrap();
        let y = c2.forward(&c1.forward(&x).unwrap()).unwrap();
        assert_eq!(y.dims(), &[2, 4, 4, 3]);
        assert!(c1.forward(&y).is_err());
    }

    #[test]
    fn softplus_is_stable() {
        let x = Tensor::new(&[-100f32, 0.0, 100.0], &Device::Cpu).unwrap();
        let y = softplus(&x).unwrap().to_vec1::<f32>().unwrap();
        assert!(y[0] >= 0.0 && y[0] < 1e-30);
        assert!((y[1] - std::f32::consts::LN_2).abs() < 1e-6);
        assert_eq!(y[2], 100.0);
    }

    #[test]
    fn planes_roundtrip() {
        let a = Plane::from_fn(3, 2, |x, y| (x + 10 * y) as f32);
        let b = Plane::filled(3, 2, 0.5);
        let t = planes_to_tensor(&[&a, &b], &Device::Cpu).unwrap();
        assert_eq!(t.dims(), &[1, 2, 2, 3]);
        let back = tensor_to_planes(&t, 0).unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn pooling_shapes() {
        let x = Tensor::ones((1, 2, 4, 6), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(global_pool(&x).unwrap().dims(), &[1, 2]);
        assert_eq!(downsample2(&x).unwrap().dims(), &[1, 2, 2, 3]);
        assert_eq!(upsample2(&x).unwrap().dims(), &[1, 2, 8, 12]);
    }
}
