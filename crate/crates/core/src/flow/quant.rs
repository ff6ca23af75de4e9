use candle_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Training-time quantization surrogate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuantMode {
    Noise,
    StraightThrough,
}

/// Source of the random draws used while training.
pub struct NoiseSource {
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        NoiseSource {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform_like(&mut self, t: &Tensor) -> Result<Tensor> {
        let n = t.elem_count();
        let v: Vec<f32> = (0..n).map(|_| self.rng.random_range(-0.5f32..0.5)).collect();
        Ok(Tensor::from_vec(v, t.shape(), t.device())?.to_dtype(t.dtype())?)
    }

    pub fn normal_like(&mut self, t: &Tensor, std: f64) -> Result<Tensor> {
        let n = t.elem_count();
        let v: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                z * std
            })
            .collect();
        Ok(Tensor::from_vec(v, t.shape(), t.device())?.to_dtype(t.dtype())?)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Whether a pass trains (surrogate quantization, random augmentation) or
/// codes (rounding, zero augmentation).
pub enum Phase<'a> {
    Train {
        noise: &'a mut NoiseSource,
        mode: QuantMode,
        augment_std: f64,
    },
    Infer,
}

impl Phase<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Phase::Train { .. })
    }
}

/// Rounds to the nearest integer, ties away from zero.
pub fn round_half_away(x: &Tensor) -> Result<Tensor> {
    Ok(x.round()?)
}

pub fn quantize(x: &Tensor, phase: &mut Phase) -> Result<Tensor> {
    match phase {
        Phase::Infer => round_half_away(x),
        Phase::Train { noise, mode, .. } => match mode {
            QuantMode::Noise => Ok((x + noise.uniform_like(x)?)?),
            QuantMode::StraightThrough => {
                let r = (round_half_away(x)? - x)?.detach();
                Ok((x + r)?)
            }
        },
    }
}

/// Augmentation input: zeros at inference, Gaussian draws while training.
pub fn augment_like(t: &Tensor, phase: &mut Phase) -> Result<Tensor> {
    match phase {
        Phase::Train {
            noise, augment_std, ..
        } if *augment_std > 0.0 => noise.normal_like(t, *augment_std),
        _ => Ok(t.zeros_like()?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device, Var};

    #[test]
    fn ties_go_away_from_zero() {
        let x = Tensor::new(&[1.5f32, -1.5, 2.5, -2.5, 0.49, -0.5, 3.0, -7.0], &Device::Cpu).unwrap();
        let q = quantize(&x, &mut Phase::Infer).unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(q, vec![2.0, -2.0, 3.0, -3.0, 0.0, -1.0, 3.0, -7.0]);
    }

    #[test]
    fn noise_is_unbiased() {
        let n = 100_000;
        let x = Tensor::full(0.3f32, n, &Device::Cpu).unwrap();
        let mut src = NoiseSource::new(1);
        let mut ph = Phase::Train {
            noise: &mut src,
            mode: QuantMode::Noise,
            augment_std: 0.0,
        };
        let q = quantize(&x, &mut ph).unwrap().to_dtype(DType::F64).unwrap();
        let v = q.to_vec1::<f64>().unwrap();
        let mean = v.iter().sum::<f64>() / n as f64;
        assert!(v.iter().all(|&a| (-0.2..0.8).contains(&a)));
        // Uniform(-0.5, 0.5) has std 1/sqrt(12).
        let sigma = (1.0f64 / 12.0).sqrt() / (n as f64).sqrt();
        assert!((mean - 0.3).abs() < 3.0 * sigma, "{mean}");
    }

    #[test]
    fn straight_through_passes_gradient() {
        let v = Var::new(&[0.3f32, 1.7], &Device::Cpu).unwrap();
        let mut src = NoiseSource::new(1);
        let mut ph = Phase::Train {
            noise: &mut src,
            mode: QuantMode::StraightThrough,
            augment_std: 0.0,
        };
        let q = quantize(v.as_tensor(), &mut ph).unwrap();
        assert_eq!(q.to_vec1::<f32>().unwrap(), vec![0.0, 2.0]);
        let g = q.sum_all().unwrap().backward().unwrap();
        assert_eq!(g.get(v.as_tensor()).unwrap().to_vec1::<f32>().unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn augmentation_is_zero_at_inference() {
        let t = Tensor::ones((2, 3), DType::F32, &Device::Cpu).unwrap();
        let a = augment_like(&t, &mut Phase::Infer).unwrap();
        assert_eq!(a.sum_all().unwrap().to_scalar::<f32>().unwrap(), 0.0);
    }
}
