//! Latent probability models: conditional Gaussian and per-channel
//! factorized densities, in a differentiable tensor form for training and an
//! f64 form that drives the entropy coder.

use candle_core::{DType, Tensor};

use crate::entropy::cdf::{gaussian_bin_probability, gaussian_table, CdfTable, DEFAULT_PRECISION};
use crate::error::{Error, Result};
use crate::nn::{sigmoid, softplus, Init, Scope};

/// Probabilities below this are clamped before taking logarithms.
pub const LIKELIHOOD_FLOOR: f64 = 1e-9;
pub const DEFAULT_SCALE_FLOOR: f64 = 0.11;

fn std_normal_cdf_t(x: &Tensor) -> Result<Tensor> {
    Ok((((x / std::f64::consts::SQRT_2)?.erf()? + 1.0)? * 0.5)?)
}

/// Unit-bin likelihood of `x` under N(mu, sigma^2), differentiable.
pub fn gaussian_likelihood(x: &Tensor, mu: &Tensor, sigma: &Tensor) -> Result<Tensor> {
    let v = (x - mu)?.abs()?;
    let upper = std_normal_cdf_t(&((v.neg()? + 0.5)? / sigma)?)?;
    let lower = std_normal_cdf_t(&((v.neg()? - 0.5)? / sigma)?)?;
    Ok((upper - lower)?.maximum(LIKELIHOOD_FLOOR)?)
}

/// Total bits of `lik` as a differentiable scalar.
pub fn bits_of(lik: &Tensor) -> Result<Tensor> {
    Ok((lik.log()?.sum_all()? * (-1.0 / std::f64::consts::LN_2))?)
}

/// Per-sample bits: (N, ...) -> (N,).
pub fn bits_per_sample(lik: &Tensor) -> Result<Tensor> {
    Ok((lik.log()?.flatten_from(1)?.sum(1)? * (-1.0 / std::f64::consts::LN_2))?)
}

/// Mean and (floored) scale of a conditional Gaussian, as tensors.
#[derive(Clone, Debug)]
pub struct GaussianParams {
    pub mu: Tensor,
    pub sigma: Tensor,
    /// Number of scales raised to the floor.
    pub clamped: usize,
}

impl GaussianParams {
    /// Splits a (N, 2C, H, W) prior output into mean and floored scale.
    pub fn from_raw(raw: &Tensor, scale_floor: f64) -> Result<Self> {
        let c = raw.dim(1)? / 2;
        let mu = raw.narrow(1, 0, c)?;
        let s = softplus(&raw.narrow(1, c, c)?)?;
        let clamped = s.lt(scale_floor)?.to_dtype(DType::F32)?.sum_all()?.to_scalar::<f32>()? as usize;
        Ok(GaussianParams {
            mu,
            sigma: s.maximum(scale_floor)?,
            clamped,
        })
    }

    pub fn likelihood(&self, x: &Tensor) -> Result<Tensor> {
        gaussian_likelihood(x, &self.mu, &self.sigma)
    }

    /// Host copies of (mu, sigma) for coding.
    pub fn host(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let f = |t: &Tensor| -> Result<Vec<f64>> { Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?) };
        Ok((f(&self.mu)?, f(&self.sigma)?))
    }

    pub fn tables(&self) -> Result<Vec<CdfTable>> {
        let (mu, sigma) = self.host()?;
        mu.iter().zip(&sigma).map(|(&m, &s)| gaussian_table(m, s)).collect()
    }
}

/// Bits of integer symbols under per-element Gaussians, in f64.
pub fn gaussian_rate(symbols: &[i32], mu: &[f64], sigma: &[f64]) -> f64 {
    symbols
        .iter()
        .zip(mu.iter().zip(sigma))
        .map(|(&s, (&m, &sd))| -gaussian_bin_probability(s as f64, m, sd).max(LIKELIHOOD_FLOOR).log2())
        .sum()
}

/// Learned per-channel cumulative density (monotone MLP over the value),
/// filters (1, 3, 3, 3, 1).
#[derive(Clone, Debug)]
pub struct FactorizedPrior {
    channels: usize,
    matrices: Vec<Tensor>,
    biases: Vec<Tensor>,
    factors: Vec<Tensor>,
    /// Regular symbol range of the coding tables is `-range ..= range`.
    pub range: i32,
}

const FILTERS: [usize; 5] = [1, 3, 3, 3, 1];
const INIT_SCALE: f64 = 10.0;

impl FactorizedPrior {
    pub fn new(scope: &Scope, channels: usize, range: i32) -> Result<Self> {
        let layers = FILTERS.len() - 1;
        let scale = INIT_SCALE.powf(1.0 / layers as f64);
        let mut matrices = Vec::new();
        let mut biases = Vec::new();
        let mut factors = Vec::new();
        for i in 0..layers {
            let init = (1.0 / scale / FILTERS[i + 1] as f64).exp_m1().ln();
            matrices.push(scope.get((channels, FILTERS[i + 1], FILTERS[i]), &format!("matrix{i}"), Init::Const(init))?);
            biases.push(scope.get((channels, FILTERS[i + 1], 1), &format!("bias{i}"), Init::Uniform(-0.5, 0.5))?);
            if i + 1 < layers {
                factors.push(scope.get((channels, FILTERS[i + 1], 1), &format!("factor{i}"), Init::Zeros)?);
            }
        }
        Ok(FactorizedPrior {
            channels,
            matrices,
            biases,
            factors,
            range,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `x` is (C, 1, M); returns logits of the cumulative, same shape.
    fn logits_cumulative(&self, x: &Tensor) -> Result<Tensor> {
        let mut l = x.clone();
        for i in 0..self.matrices.len() {
            l = softplus(&self.matrices[i])?.matmul(&l)?.broadcast_add(&self.biases[i])?;
            if i < self.factors.len() {
                l = (&l + self.factors[i].tanh()?.broadcast_mul(&l.tanh()?)?)?;
            }
        }
        Ok(l)
    }

    /// Unit-bin likelihood of `h` (N, C, H, W), differentiable.
    pub fn likelihood(&self, h: &Tensor) -> Result<Tensor> {
        let (n, c, hh, ww) = h.dims4()?;
        if c != self.channels {
            return Err(Error::Shape(format!("factorized prior for {} channels got {c}", self.channels)));
        }
        let x = h.permute((1, 0, 2, 3))?.contiguous()?.reshape((c, 1, n * hh * ww))?;
        let lower = self.logits_cumulative(&(&x - 0.5)?)?;
        let upper = self.logits_cumulative(&(&x + 0.5)?)?;
        // Evaluate on the side where the sigmoids are small.
        let sign = ((&lower + &upper)?.ge(0.0)?.to_dtype(x.dtype())? * -2.0)?.affine(1.0, 1.0)?;
        let p = (sigmoid(&(&sign * &upper)?)? - sigmoid(&(&sign * &lower)?)?)?.abs()?;
        let p = p.maximum(LIKELIHOOD_FLOOR)?;
        Ok(p.reshape((c, n, hh, ww))?.permute((1, 0, 2, 3))?.contiguous()?)
    }

    fn host_params(&self) -> Result<HostFactorized> {
        let f = |t: &Tensor| -> Result<Vec<f64>> { Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?) };
        Ok(HostFactorized {
            matrices: self.matrices.iter().map(|m| f(&softplus(m)?)).collect::<Result<_>>()?,
            biases: self.biases.iter().map(f).collect::<Result<_>>()?,
            factors: self.factors.iter().map(|t| f(&t.tanh()?)).collect::<Result<_>>()?,
        })
    }

    /// One coding table per channel.
    pub fn tables(&self) -> Result<Vec<CdfTable>> {
        let hp = self.host_params()?;
        (0..self.channels)
            .map(|c| {
                let lo = -self.range;
                let hi = self.range;
                let mut pmf = Vec::with_capacity((hi - lo + 3) as usize);
                pmf.push(logistic(hp.logit(c, lo as f64 - 0.5)));
                for s in lo..=hi {
                    pmf.push(hp.bin(c, s as f64));
                }
                pmf.push(logistic(-hp.logit(c, hi as f64 + 0.5)));
                CdfTable::from_pmf(&pmf, lo, DEFAULT_PRECISION)
            })
            .collect()
    }

    /// Bits of integer symbols laid out as (C, M) channel-major, in f64.
    pub fn rate(&self, symbols: &[i32], per_channel: usize) -> Result<f64> {
        let hp = self.host_params()?;
        Ok(symbols
            .iter()
            .enumerate()
            .map(|(i, &s)| -hp.bin(i / per_channel, s as f64).max(LIKELIHOOD_FLOOR).log2())
            .sum())
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct HostFactorized {
    matrices: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    factors: Vec<Vec<f64>>,
}

impl HostFactorized {
    fn logit(&self, c: usize, x: f64) -> f64 {
        let mut cur = vec![x];
        for i in 0..self.matrices.len() {
            let (out, inp) = (FILTERS[i + 1], FILTERS[i]);
            let m = &self.matrices[i][c * out * inp..(c + 1) * out * inp];
            let b = &self.biases[i][c * out..(c + 1) * out];
            let mut next: Vec<f64> = (0..out)
                .map(|o| (0..inp).map(|k| m[o * inp + k] * cur[k]).sum::<f64>() + b[o])
                .collect();
            if i < self.factors.len() {
                let f = &self.factors[i][c * out..(c + 1) * out];
                for (o, v) in next.iter_mut().enumerate() {
                    *v += f[o] * v.tanh();
                }
            }
            cur = next;
        }
        cur[0]
    }

    fn bin(&self, c: usize, s: f64) -> f64 {
        let lower = self.logit(c, s - 0.5);
        let upper = self.logit(c, s + 0.5);
        let sign = if lower + upper >= 0.0 { -1.0 } else { 1.0 };
        (logistic(sign * upper) - logistic(sign * lower)).abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use candle_core::Device;

    #[test]
    fn unit_gaussian_zero_symbol_bits() {
        let x = Tensor::new(&[0f64], &Device::Cpu).unwrap();
        let mu = Tensor::new(&[0f64], &Device::Cpu).unwrap();
        let s = Tensor::new(&[1f64], &Device::Cpu).unwrap();
        let b = bits_of(&gaussian_likelihood(&x, &mu, &s).unwrap()).unwrap().to_scalar::<f64>().unwrap();
        // Independent closed form: Phi(0.5) - Phi(-0.5) = erf(0.5 / sqrt 2).
        let p = statrs::function::erf::erf(0.5 / std::f64::consts::SQRT_2);
        assert!((b + p.log2()).abs() < 1e-9, "{b}");
        assert!((b - 1.3846).abs() < 1e-3);
        assert!((gaussian_rate(&[0], &[0.0], &[1.0]) - b).abs() < 1e-12);
    }

    #[test]
    fn floor_counts_clamped_scales() {
        let raw = Tensor::new(&[[[[0.0f32]], [[-10.0]]]], &Device::Cpu).unwrap();
        let p = GaussianParams::from_raw(&raw, 0.11).unwrap();
        assert_eq!(p.clamped, 1);
        assert!((p.sigma.flatten_all().unwrap().to_vec1::<f32>().unwrap()[0] - 0.11).abs() < 1e-7);
    }

    #[test]
    fn factorized_tensor_and_host_agree() {
        let store = ParamStore::new(3, DType::F64);
        let fp = FactorizedPrior::new(&store.root(), 3, 8).unwrap();
        let h = Tensor::new(&[[[[0f64, 1.0], [-2.0, 3.0]], [[0.0, 0.0], [1.0, -1.0]], [[5.0, -5.0], [0.0, 2.0]]]], &Device::Cpu).unwrap();
        let lik = fp.likelihood(&h).unwrap();
        let bits = bits_of(&lik).unwrap().to_scalar::<f64>().unwrap();
        let syms: Vec<i32> = h
            .permute((1, 0, 2, 3))
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap()
            .iter()
            .map(|&v| v as i32)
            .collect();
        let host = fp.rate(&syms, 4).unwrap();
        assert!((bits - host).abs() < 1e-9 * bits.max(1.0), "{bits} vs {host}");
        assert!(bits > 0.0);
    }

    #[test]
    fn factorized_tables_cover_total_mass() {
        let store = ParamStore::new(4, DType::F32);
        let fp = FactorizedPrior::new(&store.root(), 2, 16).unwrap();
        let t = fp.tables().unwrap();
        assert_eq!(t.len(), 2);
        for tb in t {
            tb.validate().unwrap();
            assert_eq!(tb.offset, -16);
            assert_eq!(tb.num_regular(), 33);
        }
    }

    #[test]
    fn factorized_gradients_flow() {
        let store = ParamStore::new(5, DType::F64);
        let fp = FactorizedPrior::new(&store.root(), 1, 8).unwrap();
        let h = Tensor::new(&[[[[0.3f64, -1.2]]]], &Device::Cpu).unwrap();
        let b = bits_of(&fp.likelihood(&h).unwrap()).unwrap();
        let g = b.backward().unwrap();
        let v = store.get("bias0").unwrap();
        let gb = g.get(v.as_tensor()).unwrap().abs().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(gb > 0.0);
    }
}
