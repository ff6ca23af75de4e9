//! Flow-based transform coding: quantizers, entropy models and the
//! conditional augmented normalizing flow codec.

pub mod canf;
pub mod entropy_model;
pub mod quant;

pub use canf::{symbols_of, CanfCodec, CanfConfig, CanfInput, CodedLatents, Encoded, LatentBundle, PartSpec, PriorSpec, TrainOutput};
pub use entropy_model::{
    bits_of, bits_per_sample, gaussian_likelihood, gaussian_rate, FactorizedPrior, GaussianParams, DEFAULT_SCALE_FLOOR,
    LIKELIHOOD_FLOOR,
};
pub use quant::{augment_like, quantize, round_half_away, NoiseSource, Phase, QuantMode};

use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::nn::ParamStore;

/// Adds N(0, std^2) draws to every parameter. Used to probe structural
/// properties away from the identity initialisation.
pub fn perturb_parameters(store: &ParamStore, seed: u64, std: f64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).expect("valid std");
    for name in store.names() {
        let v = store.get(&name).unwrap();
        let data: Vec<f64> = (0..v.elem_count()).map(|_| normal.sample(&mut rng)).collect();
        let t = Tensor::from_vec(data, v.shape(), v.device())?.to_dtype(v.dtype())?;
        v.set(&(v.as_tensor() + t)?)?;
    }
    Ok(())
}

/// Relative mean squared error between two part lists.
pub fn relative_mse(a: &[Tensor], b: &[Tensor]) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in a.iter().zip(b) {
        num += (x - y)?.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        den += x.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    }
    Ok(num / den.max(1e-30))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::afmod::{attach_everywhere, AfContext, AfFlags, AfSpec, RateContext, RateInput, LAMBDA_TABLE};
    use crate::entropy::ReferenceCoder;
    use crate::error::Error;
    use candle_core::Device;

    fn cfg(prior: PriorSpec) -> CanfConfig {
        CanfConfig {
            parts: vec![PartSpec {
                channels: 2,
                cond_channels: 2,
                double_res: false,
            }],
            width: 8,
            latent_channels: 4,
            levels: 2,
            prior,
            scale_floor: DEFAULT_SCALE_FLOOR,
        }
    }

    fn hyper() -> PriorSpec {
        PriorSpec::Hyper { channels: 3, range: 16 }
    }

    fn ctx(dtype: DType) -> AfContext {
        AfContext::new(&[RateContext::inter(1, 0)], &[LAMBDA_TABLE[1]], 5, 16384.0, &Device::Cpu, dtype).unwrap()
    }

    fn af_spec() -> AfSpec {
        AfSpec {
            flags: AfFlags::default(),
            rate: RateInput::Indexed { table_len: 5 },
            uses_level: true,
            lambda_max: 16384.0,
        }
    }

    fn rand(shape: (usize, usize, usize, usize), seed: u64, dtype: DType) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.0 * shape.1 * shape.2 * shape.3;
        let d = Normal::new(0.5, 0.3).unwrap();
        let v: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap().to_dtype(dtype).unwrap()
    }

    fn codec(seed: u64, dtype: DType, prior: PriorSpec, randomize: bool) -> (ParamStore, CanfCodec) {
        codec_with(seed, dtype, prior, randomize, af_spec())
    }

    fn codec_with(seed: u64, dtype: DType, prior: PriorSpec, randomize: bool, spec: AfSpec) -> (ParamStore, CanfCodec) {
        let store = ParamStore::new(seed, dtype);
        let mut c = CanfCodec::new(&store, "t", cfg(prior)).unwrap();
        attach_everywhere(&mut c, &store, spec).unwrap();
        if randomize {
            perturb_parameters(&store, seed, 0.05).unwrap();
        }
        (store, c)
    }

    #[test]
    fn flow_is_invertible_with_random_weights() {
        for seed in 0..5 {
            let (_s, c) = codec(seed, DType::F32, hyper(), true);
            let x = vec![rand((1, 2, 16, 16), seed, DType::F32)];
            let cond = vec![Some(rand((1, 2, 16, 16), seed + 100, DType::F32))];
            let (z2, x2) = c.transform(&x, &cond, &ctx(DType::F32)).unwrap();
            let back = c.synthesize(&z2, &x2, &cond, &ctx(DType::F32)).unwrap();
            let r = relative_mse(&x, &back).unwrap();
            assert!(r <= 1e-6, "seed {seed}: {r}");
            // The couplings really did something.
            assert!(relative_mse(&x, &x2).unwrap() > 1e-3);
        }
    }

    #[test]
    fn identity_init_gives_zero_latents_and_passthrough() {
        let (_s, c) = codec(1, DType::F32, hyper(), false);
        let xc = rand((1, 2, 8, 8), 3, DType::F32);
        let x = vec![xc.clone()];
        let cond = vec![Some(xc.clone())];
        let enc = c
            .encode(
                CanfInput {
                    x: &x,
                    cond: &cond,
                    prior_cond: None,
                },
                &ctx(DType::F32),
            )
            .unwrap();
        let zmax = enc.bundle.z2_hat.abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(zmax, 0.0);
        let rec = c.decode(&enc.bundle, &x, &cond, &ctx(DType::F32)).unwrap();
        let d = (&rec[0] - &xc).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(d, 0.0);
        assert!(enc.bundle.est_bits() > 0.0);
    }

    #[test]
    fn estimate_matches_direct_pmf_sum() {
        let (_s, c) = codec(2, DType::F64, hyper(), true);
        let x = vec![rand((1, 2, 16, 16), 5, DType::F64)];
        let cond = vec![Some(rand((1, 2, 16, 16), 6, DType::F64))];
        let enc = c
            .encode(
                CanfInput {
                    x: &x,
                    cond: &cond,
                    prior_cond: None,
                },
                &ctx(DType::F64),
            )
            .unwrap();
        let syms = symbols_of(&enc.bundle.z2_hat).unwrap();
        let (mu, sigma) = enc.params.host().unwrap();
        // Independent oracle: Phi via statrs' erf.
        let phi = |t: f64| 0.5 * (1.0 + statrs::function::erf::erf(t / std::f64::consts::SQRT_2));
        let oracle: f64 = syms
            .iter()
            .zip(mu.iter().zip(&sigma))
            .map(|(&s, (&m, &sd))| {
                let p = phi((s as f64 + 0.5 - m) / sd) - phi((s as f64 - 0.5 - m) / sd);
                -p.max(LIKELIHOOD_FLOOR).log2()
            })
            .sum();
        assert!((enc.bundle.est_bits_z - oracle).abs() <= 1e-6 * oracle.max(1.0), "{} vs {oracle}", enc.bundle.est_bits_z);
        assert!(sigma.iter().all(|&s| s >= DEFAULT_SCALE_FLOOR));
    }

    #[test]
    fn coded_roundtrip_is_exact() {
        for prior in [hyper(), PriorSpec::Temporal { cond_channels: 3 }] {
            let (_s, c) = codec(3, DType::F32, prior, true);
            let x = vec![rand((1, 2, 16, 16), 7, DType::F32)];
            let cond = vec![Some(rand((1, 2, 16, 16), 8, DType::F32))];
            let pc = rand((1, 3, 16, 16), 9, DType::F32);
            let ctx = ctx(DType::F32);
            let input = CanfInput {
                x: &x,
                cond: &cond,
                prior_cond: Some(&pc),
            };
            let enc = c.encode(input, &ctx).unwrap();
            let coded = c.write(&enc, &ReferenceCoder).unwrap();
            assert_eq!(coded.hyper.is_some(), c.has_hyperprior());
            let back = c.read(&coded, &cond.iter().map(|c| c.clone().unwrap()).collect::<Vec<_>>(), Some(&pc), &ctx, &ReferenceCoder).unwrap();
            assert_eq!(symbols_of(&back.z2_hat).unwrap(), symbols_of(&enc.bundle.z2_hat).unwrap());
            assert_eq!(back.est_bits_z, enc.bundle.est_bits_z);
            let anchor = vec![cond[0].clone().unwrap()];
            let r1 = c.decode(&enc.bundle, &anchor, &cond, &ctx).unwrap();
            let r2 = c.decode(&back, &anchor, &cond, &ctx).unwrap();
            let a = r1[0].flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let b = r2[0].flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn temporal_prior_codec_has_no_hyper_parameters() {
        let (store, c) = codec(4, DType::F32, PriorSpec::Temporal { cond_channels: 3 }, false);
        assert!(!c.has_hyperprior());
        assert!(store.names().iter().all(|n| !n.contains("hyper")));
        assert!(store.names().iter().any(|n| n.starts_with("t.prior")));
    }

    #[test]
    fn latent_perturbation_stays_local() {
        // Pooled content statistics couple every position, so the probe
        // runs with the content branch of the modulators disabled.
        let mut spec = af_spec();
        spec.flags.content_adaptive = false;
        let (_s, c) = codec_with(5, DType::F32, hyper(), true, spec);
        let ctx = ctx(DType::F32);
        let anchor = vec![Tensor::zeros((1, 2, 64, 64), DType::F32, &Device::Cpu).unwrap()];
        let cond = vec![Some(rand((1, 2, 64, 64), 1, DType::F32))];
        let z = Tensor::zeros((1, 4, 16, 16), DType::F32, &Device::Cpu).unwrap();
        let base = c.synthesize(&z, &anchor, &cond, &ctx).unwrap();
        let mut bump = vec![0f32; 4 * 16 * 16];
        bump[8 * 16 + 8] = 3.0;
        let z1 = Tensor::from_vec(bump, (1, 4, 16, 16), &Device::Cpu).unwrap();
        let pert = c.synthesize(&z1, &anchor, &cond, &ctx).unwrap();
        let diff = (&pert[0] - &base[0]).unwrap().abs().unwrap().sum_keepdim(1).unwrap();
        let d = diff.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        // Receptive field of the synthesis path around latent (8, 8) -> pixel (32, 32).
        let radius = 30;
        let mut changed_inside = false;
        for y in 0..64 {
            for x in 0..64 {
                let far = (y as i64 - 34).abs() > radius || (x as i64 - 34).abs() > radius;
                if far {
                    assert_eq!(d[y * 64 + x], 0.0, "({x},{y})");
                } else if d[y * 64 + x] > 0.0 {
                    changed_inside = true;
                }
            }
        }
        assert!(changed_inside);
    }

    #[test]
    fn shape_errors() {
        let (_s, c) = codec(6, DType::F32, hyper(), false);
        let ctx = ctx(DType::F32);
        let x = vec![rand((1, 2, 12, 12), 1, DType::F32)];
        let cond = vec![Some(rand((1, 2, 12, 12), 2, DType::F32))];
        assert!(matches!(c.transform(&x, &cond, &ctx), Err(Error::Dimension(_))));
        let x = vec![rand((1, 2, 16, 16), 1, DType::F32)];
        let cond = vec![Some(rand((1, 2, 8, 8), 2, DType::F32))];
        assert!(matches!(c.transform(&x, &cond, &ctx), Err(Error::Shape(_))));
    }

    #[test]
    fn rate_is_additive_over_blocks() {
        let mu = vec![0.0; 2000];
        let sigma = vec![1.3; 2000];
        let syms: Vec<i32> = (0..1000).map(|i| (i % 7) - 3).collect();
        let one = gaussian_rate(&syms, &mu[..1000], &sigma[..1000]);
        let both: Vec<i32> = syms.iter().chain(&syms).copied().collect();
        let two = gaussian_rate(&both, &mu, &sigma);
        assert!((two / one - 2.0).abs() < 0.01);
        let zeros = gaussian_rate(&[0; 10], &[0.0; 10], &[0.11; 10]);
        assert!(zeros > 0.0 && zeros < 1e-3);
    }
}
