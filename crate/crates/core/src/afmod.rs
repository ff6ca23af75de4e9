//! Adaptive feature modulation: channel-wise affine adaptation of conv
//! outputs, conditioned on the rate parameter, the coding level and pooled
//! content statistics.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{global_pool, Conv, Linear, ParamStore, Scope};

/// Inter/motion rate points, highest rate first.
pub const LAMBDA_TABLE: [f64; 5] = [16384.0, 4096.0, 1024.0, 256.0, 128.0];
pub const NUM_LEVELS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateContext {
    pub lambda_index: usize,
    /// Coding level: 1 for frames nothing references, 0 otherwise.
    pub c: u8,
    /// Continuous rate parameter of the intra codec.
    pub lambda_value: Option<f64>,
}

impl RateContext {
    pub fn inter(lambda_index: usize, c: u8) -> Self {
        RateContext {
            lambda_index,
            c,
            lambda_value: None,
        }
    }

    pub fn intra(lambda_index: usize, lambda_value: f64) -> Self {
        RateContext {
            lambda_index,
            c: 0,
            lambda_value: Some(lambda_value),
        }
    }

    pub fn validate(&self, table_len: usize) -> Result<()> {
        if self.lambda_index >= table_len {
            return Err(Error::Config(format!(
                "lambda index {} outside table of {table_len}",
                self.lambda_index
            )));
        }
        if self.c > 1 {
            return Err(Error::Config(format!("coding level {} is not 0 or 1", self.c)));
        }
        if let Some(v) = self.lambda_value {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("lambda value {v} must be positive")));
            }
        }
        Ok(())
    }
}

/// Which conditioning inputs the modulators see.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AfFlags {
    pub content_adaptive: bool,
    pub coding_level: bool,
}

impl Default for AfFlags {
    fn default() -> Self {
        AfFlags {
            content_adaptive: true,
            coding_level: true,
        }
    }
}

/// How the rate parameter enters a modulator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RateInput {
    /// Normalised log-lambda plus a learned vector per table index.
    Indexed { table_len: usize },
    /// Normalised log-lambda only (intra codec).
    Continuous,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AfSpec {
    pub flags: AfFlags,
    pub rate: RateInput,
    /// Whether the coding level is meaningful for the host codec.
    pub uses_level: bool,
    pub lambda_max: f64,
}

impl AfSpec {
    fn cond_width(&self, channels: usize) -> usize {
        let mut n = 1;
        if self.flags.content_adaptive {
            n += channels;
        }
        if let RateInput::Indexed { table_len } = self.rate {
            n += table_len;
        }
        if self.flags.coding_level && self.uses_level {
            n += NUM_LEVELS;
        }
        n
    }
}

/// Batched conditioning shared by all modulators of one forward pass.
#[derive(Clone, Debug)]
pub struct AfContext {
    log_lambda: Tensor,
    index_onehot: Tensor,
    level_onehot: Tensor,
    contexts: Vec<RateContext>,
}

impl AfContext {
    /// `lambdas` gives the effective lambda of each sample (table value or
    /// continuous value).
    pub fn new(contexts: &[RateContext], lambdas: &[f64], spec_table_len: usize, lambda_max: f64, device: &Device, dtype: DType) -> Result<Self> {
        if contexts.is_empty() || contexts.len() != lambdas.len() {
            return Err(Error::Shape("one lambda per rate context required".into()));
        }
        let n = contexts.len();
        let norm = lambda_max.ln();
        let mut ll = Vec::with_capacity(n);
        let mut idx = vec![0f64; n * spec_table_len];
        let mut lvl = vec![0f64; n * NUM_LEVELS];
        for (i, (c, &l)) in contexts.iter().zip(lambdas).enumerate() {
            c.validate(spec_table_len)?;
            ll.push(l.ln() / norm);
            idx[i * spec_table_len + c.lambda_index] = 1.0;
            lvl[i * NUM_LEVELS + c.c as usize] = 1.0;
        }
        Ok(AfContext {
            log_lambda: Tensor::from_vec(ll, (n, 1), device)?.to_dtype(dtype)?,
            index_onehot: Tensor::from_vec(idx, (n, spec_table_len), device)?.to_dtype(dtype)?,
            level_onehot: Tensor::from_vec(lvl, (n, NUM_LEVELS), device)?.to_dtype(dtype)?,
            contexts: contexts.to_vec(),
        })
    }

    pub fn batch(&self) -> usize {
        self.contexts.len()
    }

    pub fn contexts(&self) -> &[RateContext] {
        &self.contexts
    }
}

/// Two-layer perceptron producing per-channel (gamma, beta).
#[derive(Clone, Debug)]
pub struct AfModulator {
    spec: AfSpec,
    channels: usize,
    hidden: Linear,
    out: Linear,
}

impl AfModulator {
    pub fn new(scope: &Scope, channels: usize, spec: AfSpec) -> Result<Self> {
        Ok(AfModulator {
            spec,
            channels,
            hidden: Linear::new(&scope.pp("fc1"), spec.cond_width(channels), channels)?,
            out: Linear::zeroed(&scope.pp("fc2"), channels, 2 * channels)?,
        })
    }

    pub fn spec(&self) -> &AfSpec {
        &self.spec
    }

    /// Per-sample (gamma, beta), each (N, C).
    pub fn params(&self, features: &Tensor, ctx: &AfContext) -> Result<(Tensor, Tensor)> {
        let (n, c, _, _) = features.dims4()?;
        if c != self.channels {
            return Err(Error::Shape(format!(
                "modulator built for {} channels got {c}",
                self.channels
            )));
        }
        if n != ctx.batch() {
            return Err(Error::Shape(format!("batch {n} with {} rate contexts", ctx.batch())));
        }
        let mut parts = Vec::with_capacity(4);
        if self.spec.flags.content_adaptive {
            parts.push(global_pool(features)?);
        }
        parts.push(ctx.log_lambda.clone());
        if let RateInput::Indexed { .. } = self.spec.rate {
            parts.push(ctx.index_onehot.clone());
        }
        if self.spec.flags.coding_level && self.spec.uses_level {
            parts.push(ctx.level_onehot.clone());
        }
        let cond = Tensor::cat(&parts, 1)?;
        let h = self.hidden.forward(&cond)?.relu()?;
        let o = self.out.forward(&h)?;
        let delta = o.narrow(1, 0, c)?;
        let beta = o.narrow(1, c, c)?;
        Ok(((delta + 1.0)?, beta))
    }

    pub fn forward(&self, features: &Tensor, ctx: &AfContext) -> Result<Tensor> {
        let (n, c, _, _) = features.dims4()?;
        let (gamma, beta) = self.params(features, ctx)?;
        let y = features.broadcast_mul(&gamma.reshape((n, c, 1, 1))?)?;
        Ok(y.broadcast_add(&beta.reshape((n, c, 1, 1))?)?)
    }
}

/// A convolution with an optional modulator on its output.
#[derive(Clone, Debug)]
pub struct AfConv {
    pub path: String,
    pub conv: Conv,
    pub af: Option<AfModulator>,
}

impl AfConv {
    pub fn new(scope: &Scope, cin: usize, cout: usize, k: usize, stride: usize) -> Result<Self> {
        Ok(AfConv {
            path: scope.path().to_string(),
            conv: Conv::new(scope, cin, cout, k, stride)?,
            af: None,
        })
    }

    pub fn zeroed(scope: &Scope, cin: usize, cout: usize, k: usize, stride: usize) -> Result<Self> {
        Ok(AfConv {
            path: scope.path().to_string(),
            conv: Conv::zeroed(scope, cin, cout, k, stride)?,
            af: None,
        })
    }

    pub fn forward(&self, x: &Tensor, ctx: Option<&AfContext>) -> Result<Tensor> {
        let y = self.conv.forward(x)?;
        match (&self.af, ctx) {
            (Some(af), Some(ctx)) => af.forward(&y, ctx),
            (Some(_), None) => Err(Error::Config(format!("{} needs a rate context", self.path))),
            (None, _) => Ok(y),
        }
    }
}

/// Anything that owns modulatable convolutions.
pub trait AfHost {
    fn af_convs(&mut self) -> Vec<&mut AfConv>;
}

/// Gives every convolution of `host` exactly one modulator; returns how many
/// were attached.
pub fn attach_everywhere(host: &mut dyn AfHost, store: &ParamStore, spec: AfSpec) -> Result<usize> {
    let mut convs = host.af_convs();
    if let Some(c) = convs.iter().find(|c| c.af.is_some()) {
        return Err(Error::Config(format!("modulator already attached to {}", c.path)));
    }
    for c in convs.iter_mut() {
        let scope = store.root().pp(&c.path).pp("af");
        c.af = Some(AfModulator::new(&scope, c.conv.out_channels, spec)?);
    }
    Ok(convs.len())
}

pub fn count_modulators(host: &mut dyn AfHost) -> usize {
    host.af_convs().iter().filter(|c| c.af.is_some()).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn spec(flags: AfFlags) -> AfSpec {
        AfSpec {
            flags,
            rate: RateInput::Indexed { table_len: 5 },
            uses_level: true,
            lambda_max: 16384.0,
        }
    }

    fn ctx(idx: usize, c: u8, n: usize) -> AfContext {
        let cs = vec![RateContext::inter(idx, c); n];
        let ls = vec![LAMBDA_TABLE[idx]; n];
        AfContext::new(&cs, &ls, 5, 16384.0, &Device::Cpu, DType::F32).unwrap()
    }

    struct Two(AfConv, AfConv);

    impl AfHost for Two {
        fn af_convs(&mut self) -> Vec<&mut AfConv> {
            vec![&mut self.0, &mut self.1]
        }
    }

    #[test]
    fn identity_at_init() {
        let store = ParamStore::new(3, DType::F32);
        let m = AfModulator::new(&store.root(), 4, spec(AfFlags::default())).unwrap();
        let x = Tensor::randn(0f32, 1.0, (2, 4, 3, 5), &Device::Cpu).unwrap();
        let y = m.forward(&x, &ctx(1, 1, 2)).unwrap();
        assert_eq!(y.dims(), x.dims());
        let a = x.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn same_statistics_same_params() {
        let store = ParamStore::new(4, DType::F32);
        let m = AfModulator::new(&store.root(), 2, spec(AfFlags::default())).unwrap();
        // Perturb the output layer so the parameters are not trivially 1/0.
        let w = store.get("fc2.weight").unwrap();
        w.set(&Tensor::randn(0f32, 1.0, w.shape(), &Device::Cpu).unwrap()).unwrap();
        // Same per-channel mean, different spatial arrangement.
        let a = Tensor::new(&[[[[1f32, 3.0], [0.0, 4.0]], [[2f32, 2.0], [2.0, 2.0]]]], &Device::Cpu).unwrap();
        let b = Tensor::new(&[[[[4f32, 0.0], [3.0, 1.0]], [[0f32, 4.0], [1.0, 3.0]]]], &Device::Cpu).unwrap();
        let (ga, ba) = m.params(&a, &ctx(2, 0, 1)).unwrap();
        let (gb, bb) = m.params(&b, &ctx(2, 0, 1)).unwrap();
        assert_eq!(ga.to_vec2::<f32>().unwrap(), gb.to_vec2::<f32>().unwrap());
        assert_eq!(ba.to_vec2::<f32>().unwrap(), bb.to_vec2::<f32>().unwrap());
        let (gc, _) = m.params(&a, &ctx(2, 1, 1)).unwrap();
        assert_ne!(ga.to_vec2::<f32>().unwrap(), gc.to_vec2::<f32>().unwrap());
    }

    #[test]
    fn channel_mismatch_errors() {
        let store = ParamStore::new(5, DType::F32);
        let m = AfModulator::new(&store.root(), 3, spec(AfFlags::default())).unwrap();
        let x = Tensor::zeros((1, 4, 2, 2), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(m.forward(&x, &ctx(0, 0, 1)), Err(Error::Shape(_))));
    }

    #[test]
    fn attach_counts_and_refuses_twice() {
        let store = ParamStore::new(6, DType::F32);
        let mut host = Two(
            AfConv::new(&store.root().pp("a"), 1, 3, 3, 1).unwrap(),
            AfConv::new(&store.root().pp("b"), 3, 2, 3, 2).unwrap(),
        );
        assert_eq!(attach_everywhere(&mut host, &store, spec(AfFlags::default())).unwrap(), 2);
        assert_eq!(count_modulators(&mut host), 2);
        assert!(store.get("b.af.fc2.weight").is_some());
        assert!(matches!(
            attach_everywhere(&mut host, &store, spec(AfFlags::default())),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn ablations_shrink_the_condition() {
        let full = spec(AfFlags::default());
        let bare = spec(AfFlags {
            content_adaptive: false,
            coding_level: false,
        });
        assert_eq!(full.cond_width(8), 8 + 1 + 5 + 2);
        assert_eq!(bare.cond_width(8), 1 + 5);
        let store = ParamStore::new(7, DType::F32);
        let m = AfModulator::new(&store.root(), 8, bare).unwrap();
        let x = Tensor::ones((1, 8, 2, 2), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(m.forward(&x, &ctx(4, 1, 1)).unwrap().dims(), &[1, 8, 2, 2]);
        assert_eq!(store.get("fc1.weight").unwrap().dims(), &[8, 6]);
    }

    #[test]
    fn context_validation() {
        assert!(RateContext::inter(5, 0).validate(5).is_err());
        assert!(RateContext::inter(0, 2).validate(5).is_err());
        assert!(RateContext::intra(0, -1.0).validate(5).is_err());
        assert!(RateContext::intra(0, 300.0).validate(5).is_ok());
    }
}
