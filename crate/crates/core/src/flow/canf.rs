//! Conditional augmented normalizing flow codec.
//!
//! Two additive coupling steps move the input `x` towards the condition
//! while collecting a latent `z`:
//!
//! ```text
//! z1 = e_z + g_enc1(x0 | c)    x1 = x0 - g_dec1(z1 | c)
//! z2 = z1  + g_enc2(x1 | c)    x2 = x1 - g_dec2(Q(z2) | c)
//! ```
//!
//! Decoding inverts the steps starting from an anchor in place of `x2`
//! (the motion-compensated frame for inter coding, zeros for intra coding).
//! The input may consist of several parts at different resolutions, each
//! with its own condition; they meet in a shared trunk.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::entropy_model::{bits_of, gaussian_rate, FactorizedPrior, GaussianParams};
use super::quant::{augment_like, quantize, Phase};
use crate::afmod::{AfContext, AfConv, AfHost};
use crate::entropy::SymbolCoder;
use crate::error::{Error, Result};
use crate::nn::{leaky_relu, upsample2, ParamStore, Scope};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartSpec {
    pub channels: usize,
    pub cond_channels: usize,
    /// The part lives at twice the trunk resolution.
    pub double_res: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PriorSpec {
    /// Hyper-latent with `channels` channels coded under a factorized
    /// density whose tables span `-range ..= range`.
    Hyper { channels: usize, range: i32 },
    /// Entropy parameters predicted from a condition at trunk resolution.
    Temporal { cond_channels: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanfConfig {
    pub parts: Vec<PartSpec>,
    pub width: usize,
    pub latent_channels: usize,
    pub levels: usize,
    pub prior: PriorSpec,
    pub scale_floor: f64,
}

impl CanfConfig {
    /// Trunk-resolution sizes must be multiples of this.
    pub fn alignment(&self) -> usize {
        let extra = matches!(self.prior, PriorSpec::Hyper { .. }) as usize;
        1 << (self.levels + extra)
    }
}

/// Initial pre-softplus scale of every entropy model, so that an untrained
/// codec spends almost nothing on all-zero latents.
pub const SCALE_BIAS_INIT: f64 = -2.0;

fn init_scale_bias(store: &ParamStore, conv: &AfConv, latent: usize) -> Result<()> {
    let v = store
        .get(&format!("{}.bias", conv.path))
        .ok_or_else(|| Error::Config(format!("{} has no bias", conv.path)))?;
    let b: Vec<f64> = (0..2 * latent).map(|i| if i < latent { 0.0 } else { SCALE_BIAS_INIT }).collect();
    v.set(&Tensor::from_vec(b, 2 * latent, v.device())?.to_dtype(v.dtype())?)?;
    Ok(())
}

fn act(x: Tensor) -> Result<Tensor> {
    leaky_relu(&x)
}

fn check_finite(t: &Tensor, layer: &str) -> Result<()> {
    let s = t.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if s.is_finite() {
        Ok(())
    } else {
        Err(Error::NumericFailure { layer: layer.to_string() })
    }
}

fn with_cond(x: &Tensor, cond: &Option<Tensor>) -> Result<Tensor> {
    match cond {
        Some(c) => Ok(Tensor::cat(&[x, c], 1)?),
        None => Ok(x.clone()),
    }
}

#[derive(Clone, Debug)]
struct EncNet {
    name: String,
    stems: Vec<AfConv>,
    trunk: Vec<AfConv>,
    out: AfConv,
}

impl EncNet {
    fn new(scope: &Scope, cfg: &CanfConfig) -> Result<Self> {
        let w = cfg.width;
        let stems = cfg
            .parts
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let stride = if p.double_res { 2 } else { 1 };
                AfConv::new(&scope.pp(format!("stem{i}")), p.channels + p.cond_channels, w, 3, stride)
            })
            .collect::<Result<Vec<_>>>()?;
        let trunk = (0..cfg.levels)
            .map(|l| {
                let cin = if l == 0 { w * cfg.parts.len() } else { w };
                AfConv::new(&scope.pp(format!("down{l}")), cin, w, 3, 2)
            })
            .collect::<Result<Vec<_>>>()?;
        let cin = if cfg.levels == 0 { w * cfg.parts.len() } else { w };
        Ok(EncNet {
            name: scope.path().to_string(),
            stems,
            trunk,
            out: AfConv::zeroed(&scope.pp("out"), cin, cfg.latent_channels, 3, 1)?,
        })
    }

    fn forward(&self, x: &[Tensor], cond: &[Option<Tensor>], ctx: &AfContext) -> Result<Tensor> {
        let feats = self
            .stems
            .iter()
            .zip(x.iter().zip(cond))
            .map(|(s, (xi, ci))| act(s.forward(&with_cond(xi, ci)?, Some(ctx))?))
            .collect::<Result<Vec<_>>>()?;
        let mut f = Tensor::cat(&feats, 1)?;
        for t in &self.trunk {
            f = act(t.forward(&f, Some(ctx))?)?;
        }
        let z = self.out.forward(&f, Some(ctx))?;
        check_finite(&z, &self.name)?;
        Ok(z)
    }

    fn convs(&mut self) -> Vec<&mut AfConv> {
        let mut v: Vec<&mut AfConv> = self.stems.iter_mut().collect();
        v.extend(self.trunk.iter_mut());
        v.push(&mut self.out);
        v
    }
}

#[derive(Clone, Debug)]
struct DecNet {
    name: String,
    inp: AfConv,
    ups: Vec<AfConv>,
    heads: Vec<(AfConv, AfConv)>,
    double_res: Vec<bool>,
}

impl DecNet {
    fn new(scope: &Scope, cfg: &CanfConfig) -> Result<Self> {
        let w = cfg.width;
        let ups = (0..cfg.levels)
            .map(|l| AfConv::new(&scope.pp(format!("up{l}")), w, w, 3, 1))
            .collect::<Result<Vec<_>>>()?;
        let heads = cfg
            .parts
            .iter()
            .enumerate()
            .map(|(i, p)| {
                Ok((
                    AfConv::new(&scope.pp(format!("head{i}a")), w + p.cond_channels, w, 3, 1)?,
                    AfConv::zeroed(&scope.pp(format!("head{i}b")), w, p.channels, 3, 1)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DecNet {
            name: scope.path().to_string(),
            inp: AfConv::new(&scope.pp("in"), cfg.latent_channels, w, 3, 1)?,
            ups,
            heads,
            double_res: cfg.parts.iter().map(|p| p.double_res).collect(),
        })
    }

    fn forward(&self, z: &Tensor, cond: &[Option<Tensor>], ctx: &AfContext) -> Result<Vec<Tensor>> {
        let mut f = act(self.inp.forward(z, Some(ctx))?)?;
        for u in &self.ups {
            f = act(u.forward(&upsample2(&f)?, Some(ctx))?)?;
        }
        let mut out = Vec::with_capacity(self.heads.len());
        for (i, (a, b)) in self.heads.iter().enumerate() {
            let g = if self.double_res[i] { upsample2(&f)? } else { f.clone() };
            let g = act(a.forward(&with_cond(&g, &cond[i])?, Some(ctx))?)?;
            let y = b.forward(&g, Some(ctx))?;
            check_finite(&y, &self.name)?;
            out.push(y);
        }
        Ok(out)
    }

    fn convs(&mut self) -> Vec<&mut AfConv> {
        let mut v = vec![&mut self.inp];
        v.extend(self.ups.iter_mut());
        for (a, b) in self.heads.iter_mut() {
            v.push(a);
            v.push(b);
        }
        v
    }
}

#[derive(Clone, Debug)]
struct Hyperprior {
    enc: [AfConv; 2],
    dec: [AfConv; 2],
    factorized: FactorizedPrior,
}

#[derive(Clone, Debug)]
struct TemporalPrior {
    convs: Vec<AfConv>,
    out: AfConv,
}

/// Quantized latents of one coded item plus their estimated cost.
#[derive(Clone, Debug)]
pub struct LatentBundle {
    pub z2_hat: Tensor,
    pub h2_hat: Option<Tensor>,
    pub e_z: Tensor,
    pub e_h: Option<Tensor>,
    pub est_bits_z: f64,
    pub est_bits_h: f64,
}

impl LatentBundle {
    pub fn est_bits(&self) -> f64 {
        self.est_bits_z + self.est_bits_h
    }
}

/// Inputs of one coding call. `x` and `cond` hold one entry per part.
#[derive(Clone, Copy)]
pub struct CanfInput<'a> {
    pub x: &'a [Tensor],
    pub cond: &'a [Option<Tensor>],
    pub prior_cond: Option<&'a Tensor>,
}

pub struct Encoded {
    pub bundle: LatentBundle,
    pub x_recon_path: Vec<Tensor>,
    pub params: GaussianParams,
}

pub struct TrainOutput {
    pub recon: Vec<Tensor>,
    /// Differentiable total bits over the batch.
    pub bits: Tensor,
}

/// Entropy-coded latents: the hyper-latent stream (if any) and the main one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodedLatents {
    pub hyper: Option<Vec<u8>>,
    pub main: Vec<u8>,
}

#[derive(Clone, Debug)]
pub struct CanfCodec {
    cfg: CanfConfig,
    name: String,
    enc: Vec<EncNet>,
    dec: Vec<DecNet>,
    hyper: Option<Hyperprior>,
    temporal: Option<TemporalPrior>,
}

impl CanfCodec {
    pub fn new(store: &ParamStore, name: &str, cfg: CanfConfig) -> Result<Self> {
        if cfg.parts.is_empty() {
            return Err(Error::Config(format!("{name}: no input parts")));
        }
        let scope = store.root().pp(name);
        let enc = (0..2)
            .map(|i| EncNet::new(&scope.pp(format!("enc{}", i + 1)), &cfg))
            .collect::<Result<Vec<_>>>()?;
        let dec = (0..2)
            .map(|i| DecNet::new(&scope.pp(format!("dec{}", i + 1)), &cfg))
            .collect::<Result<Vec<_>>>()?;
        let w = cfg.width;
        let (hyper, temporal) = match &cfg.prior {
            PriorSpec::Hyper { channels, range } => {
                let s = scope.pp("hyper");
                (
                    Some(Hyperprior {
                        enc: [
                            AfConv::new(&s.pp("enc0"), cfg.latent_channels, w, 3, 1)?,
                            AfConv::new(&s.pp("enc1"), w, *channels, 3, 2)?,
                        ],
                        dec: [
                            AfConv::new(&s.pp("dec0"), *channels, w, 3, 1)?,
                            AfConv::new(&s.pp("dec1"), w, 2 * cfg.latent_channels, 3, 1)?,
                        ],
                        factorized: FactorizedPrior::new(&s.pp("factorized"), *channels, *range)?,
                    }),
                    None,
                )
            }
            PriorSpec::Temporal { cond_channels } => {
                let s = scope.pp("prior");
                let mut convs = vec![AfConv::new(&s.pp("c0"), *cond_channels, w, 3, 1)?];
                for l in 0..cfg.levels {
                    convs.push(AfConv::new(&s.pp(format!("down{l}")), w, w, 3, 2)?);
                }
                (
                    None,
                    Some(TemporalPrior {
                        convs,
                        out: AfConv::new(&s.pp("out"), w, 2 * cfg.latent_channels, 3, 1)?,
                    }),
                )
            }
        };
        if let Some(hp) = &hyper {
            init_scale_bias(store, &hp.dec[1], cfg.latent_channels)?;
        }
        if let Some(tp) = &temporal {
            init_scale_bias(store, &tp.out, cfg.latent_channels)?;
        }
        Ok(CanfCodec {
            cfg,
            name: name.to_string(),
            enc,
            dec,
            hyper,
            temporal,
        })
    }

    pub fn config(&self) -> &CanfConfig {
        &self.cfg
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn has_hyperprior(&self) -> bool {
        self.hyper.is_some()
    }

    /// Latent (height, width) for parts shaped like `x`.
    pub fn latent_hw(&self, x: &[Tensor]) -> Result<(usize, usize)> {
        let (_, _, h, w) = x[0].dims4()?;
        let (h, w) = if self.cfg.parts[0].double_res { (h / 2, w / 2) } else { (h, w) };
        let a = self.cfg.alignment();
        if h % a != 0 || w % a != 0 {
            return Err(Error::Dimension(format!(
                "{}: trunk size {w}x{h} is not a multiple of {a}",
                self.name
            )));
        }
        Ok((h >> self.cfg.levels, w >> self.cfg.levels))
    }

    fn check_input(&self, x: &[Tensor], cond: &[Option<Tensor>]) -> Result<()> {
        if x.len() != self.cfg.parts.len() || cond.len() != self.cfg.parts.len() {
            return Err(Error::Shape(format!(
                "{}: expected {} parts",
                self.name,
                self.cfg.parts.len()
            )));
        }
        let (n, _, th, tw) = x[0].dims4()?;
        let (th, tw) = if self.cfg.parts[0].double_res { (th / 2, tw / 2) } else { (th, tw) };
        for (i, (p, (xi, ci))) in self.cfg.parts.iter().zip(x.iter().zip(cond)).enumerate() {
            let (xn, xc, xh, xw) = xi.dims4()?;
            let scale = if p.double_res { 2 } else { 1 };
            if xn != n || xc != p.channels || xh != th * scale || xw != tw * scale {
                return Err(Error::Shape(format!(
                    "{}: part {i} has shape {:?}",
                    self.name,
                    xi.dims()
                )));
            }
            match (ci, p.cond_channels) {
                (None, 0) => {}
                (Some(c), cc) if c.dims() == [n, cc, xh, xw] => {}
                _ => {
                    return Err(Error::Shape(format!(
                        "{}: condition of part {i} does not match {:?}",
                        self.name,
                        xi.dims()
                    )))
                }
            }
        }
        Ok(())
    }

    fn sub(a: &[Tensor], b: &[Tensor]) -> Result<Vec<Tensor>> {
        a.iter().zip(b).map(|(x, y)| Ok((x - y)?)).collect()
    }

    fn add(a: &[Tensor], b: &[Tensor]) -> Result<Vec<Tensor>> {
        a.iter().zip(b).map(|(x, y)| Ok((x + y)?)).collect()
    }

    /// First coupling step and the latent half of the second: (z2, x1).
    fn analysis(&self, x: &[Tensor], cond: &[Option<Tensor>], ctx: &AfContext, e_z: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let z1 = (e_z + self.enc[0].forward(x, cond, ctx)?)?;
        let x1 = Self::sub(x, &self.dec[0].forward(&z1, cond, ctx)?)?;
        let z2 = (&z1 + self.enc[1].forward(&x1, cond, ctx)?)?;
        Ok((z2, x1))
    }

    /// Inverts both coupling steps from (z2, x2).
    pub fn synthesize(&self, z2: &Tensor, x2: &[Tensor], cond: &[Option<Tensor>], ctx: &AfContext) -> Result<Vec<Tensor>> {
        let x1 = Self::add(x2, &self.dec[1].forward(z2, cond, ctx)?)?;
        let z1 = (z2 - self.enc[1].forward(&x1, cond, ctx)?)?;
        Self::add(&x1, &self.dec[0].forward(&z1, cond, ctx)?)
    }

    /// Runs the flow forward without quantization: (z2, x2).
    pub fn transform(&self, x: &[Tensor], cond: &[Option<Tensor>], ctx: &AfContext) -> Result<(Tensor, Vec<Tensor>)> {
        self.check_input(x, cond)?;
        let (lh, lw) = self.latent_hw(x)?;
        let e_z = Tensor::zeros((x[0].dim(0)?, self.cfg.latent_channels, lh, lw), x[0].dtype(), x[0].device())?;
        let (z2, x1) = self.analysis(x, cond, ctx, &e_z)?;
        let x2 = Self::sub(&x1, &self.dec[1].forward(&z2, cond, ctx)?)?;
        Ok((z2, x2))
    }

    fn hyper_decode(&self, hp: &Hyperprior, h_hat: &Tensor, ctx: &AfContext) -> Result<GaussianParams> {
        let f = act(hp.dec[0].forward(&upsample2(h_hat)?, Some(ctx))?)?;
        let raw = hp.dec[1].forward(&f, Some(ctx))?;
        check_finite(&raw, &format!("{}.hyper", self.name))?;
        GaussianParams::from_raw(&raw, self.cfg.scale_floor)
    }

    fn hyper_analysis(&self, hp: &Hyperprior, z2: &Tensor, ctx: &AfContext) -> Result<Tensor> {
        let f = act(hp.enc[0].forward(z2, Some(ctx))?)?;
        Ok(hp.enc[1].forward(&f, Some(ctx))?)
    }

    fn temporal_params(&self, tp: &TemporalPrior, prior_cond: Option<&Tensor>, ctx: &AfContext) -> Result<GaussianParams> {
        let mut f = prior_cond
            .ok_or_else(|| Error::Config(format!("{}: temporal prior needs a condition", self.name)))?
            .clone();
        for c in &tp.convs {
            f = act(c.forward(&f, Some(ctx))?)?;
        }
        let raw = tp.out.forward(&f, Some(ctx))?;
        check_finite(&raw, &format!("{}.prior", self.name))?;
        GaussianParams::from_raw(&raw, self.cfg.scale_floor)
    }

    /// Hyper-encoding: the quantized hyper-latent (with its augmentation
    /// input) and the Gaussian parameters it decodes to.
    pub fn hyper_encode(&self, z2: &Tensor, ctx: &AfContext, phase: &mut Phase) -> Result<Option<(Tensor, Tensor, GaussianParams)>> {
        let Some(hp) = &self.hyper else { return Ok(None) };
        let h = self.hyper_analysis(hp, z2, ctx)?;
        let e_h = augment_like(&h, phase)?;
        let h_hat = quantize(&(h + &e_h)?, phase)?;
        let params = self.hyper_decode(hp, &h_hat, ctx)?;
        Ok(Some((h_hat, e_h, params)))
    }

    /// Differentiable pass used for training: reconstruction from the
    /// anchor and total estimated bits.
    pub fn forward_train(&self, input: CanfInput, anchor: &[Tensor], ctx: &AfContext, phase: &mut Phase) -> Result<TrainOutput> {
        self.check_input(input.x, input.cond)?;
        let (lh, lw) = self.latent_hw(input.x)?;
        let n = input.x[0].dim(0)?;
        let shape = (n, self.cfg.latent_channels, lh, lw);
        let e_z = augment_like(&Tensor::zeros(shape, input.x[0].dtype(), input.x[0].device())?, phase)?;
        let (z2, _) = self.analysis(input.x, input.cond, ctx, &e_z)?;
        let z_hat = quantize(&z2, phase)?;
        let (params, h_bits) = match self.hyper_encode(&z2, ctx, phase)? {
            Some((h_hat, _, params)) => {
                let hp = self.hyper.as_ref().unwrap();
                (params, Some(bits_of(&hp.factorized.likelihood(&h_hat)?)?))
            }
            None => (self.temporal_params(self.temporal.as_ref().unwrap(), input.prior_cond, ctx)?, None),
        };
        let mut bits = bits_of(&params.likelihood(&z_hat)?)?;
        if let Some(hb) = h_bits {
            bits = (bits + hb)?;
        }
        let recon = self.synthesize(&z_hat, anchor, input.cond, ctx)?;
        Ok(TrainOutput { recon, bits })
    }

    /// Inference-time analysis: rounded latents, their rate estimates and
    /// the end point of the encoder's path.
    pub fn encode(&self, input: CanfInput, ctx: &AfContext) -> Result<Encoded> {
        self.check_input(input.x, input.cond)?;
        let (lh, lw) = self.latent_hw(input.x)?;
        let n = input.x[0].dim(0)?;
        let e_z = Tensor::zeros((n, self.cfg.latent_channels, lh, lw), input.x[0].dtype(), input.x[0].device())?;
        let (z2, x1) = self.analysis(input.x, input.cond, ctx, &e_z)?;
        let z2_hat = quantize(&z2, &mut Phase::Infer)?;
        let mut phase = Phase::Infer;
        let (params, h2_hat, e_h, est_bits_h) = match self.hyper_encode(&z2, ctx, &mut phase)? {
            Some((h_hat, e_h, params)) => {
                let hp = self.hyper.as_ref().unwrap();
                let (_, hc, hh, hw) = h_hat.dims4()?;
                let bits = hp.factorized.rate(&symbols_of(&h_hat)?, hh * hw)?;
                debug_assert_eq!(hc, hp.factorized.channels());
                (params, Some(h_hat), Some(e_h), bits)
            }
            None => (
                self.temporal_params(self.temporal.as_ref().unwrap(), input.prior_cond, ctx)?,
                None,
                None,
                0.0,
            ),
        };
        let (mu, sigma) = params.host()?;
        let est_bits_z = gaussian_rate(&symbols_of(&z2_hat)?, &mu, &sigma);
        let x_recon_path = Self::sub(&x1, &self.dec[1].forward(&z2_hat, input.cond, ctx)?)?;
        Ok(Encoded {
            bundle: LatentBundle {
                z2_hat,
                h2_hat,
                e_z,
                e_h,
                est_bits_z,
                est_bits_h,
            },
            x_recon_path,
            params,
        })
    }

    /// Reconstruction from quantized latents, starting at `anchor`.
    pub fn decode(&self, bundle: &LatentBundle, anchor: &[Tensor], cond: &[Option<Tensor>], ctx: &AfContext) -> Result<Vec<Tensor>> {
        self.check_input(anchor, cond)?;
        let (lh, lw) = self.latent_hw(anchor)?;
        let (_, c, h, w) = bundle.z2_hat.dims4()?;
        if (c, h, w) != (self.cfg.latent_channels, lh, lw) {
            return Err(Error::Shape(format!(
                "{}: latent {:?} does not fit anchor {:?}",
                self.name,
                bundle.z2_hat.dims(),
                anchor[0].dims()
            )));
        }
        self.synthesize(&bundle.z2_hat, anchor, cond, ctx)
    }

    /// Entropy codes an inference-time encoding (batch size one).
    pub fn write(&self, enc: &Encoded, coder: &dyn SymbolCoder) -> Result<CodedLatents> {
        let hyper = match (&self.hyper, &enc.bundle.h2_hat) {
            (Some(hp), Some(h)) => {
                let (_, _, hh, hw) = h.dims4()?;
                let syms = symbols_of(h)?;
                let idx: Vec<u32> = (0..syms.len()).map(|i| (i / (hh * hw)) as u32).collect();
                Some(coder.encode(&hp.factorized.tables()?, &idx, &syms)?)
            }
            _ => None,
        };
        let syms = symbols_of(&enc.bundle.z2_hat)?;
        let idx: Vec<u32> = (0..syms.len() as u32).collect();
        let main = coder.encode(&enc.params.tables()?, &idx, &syms)?;
        Ok(CodedLatents { hyper, main })
    }

    /// Entropy decodes latents for parts shaped like `anchor`.
    pub fn read(&self, coded: &CodedLatents, anchor: &[Tensor], prior_cond: Option<&Tensor>, ctx: &AfContext, coder: &dyn SymbolCoder) -> Result<LatentBundle> {
        let (lh, lw) = self.latent_hw(anchor)?;
        let dev = anchor[0].device();
        let dtype = anchor[0].dtype();
        let lc = self.cfg.latent_channels;
        let (params, h2_hat, e_h, est_bits_h) = match &self.hyper {
            Some(hp) => {
                let bytes = coded
                    .hyper
                    .as_ref()
                    .ok_or_else(|| Error::Bitstream(format!("{}: missing hyper-latent stream", self.name)))?;
                let (hh, hw) = (lh / 2, lw / 2);
                let hc = hp.factorized.channels();
                let idx: Vec<u32> = (0..hc * hh * hw).map(|i| (i / (hh * hw)) as u32).collect();
                let syms = coder.decode(&hp.factorized.tables()?, &idx, bytes)?;
                let est = hp.factorized.rate(&syms, hh * hw)?;
                let h_hat = tensor_of(&syms, (1, hc, hh, hw), dev, dtype)?;
                let params = self.hyper_decode(hp, &h_hat, ctx)?;
                let e_h = h_hat.zeros_like()?;
                (params, Some(h_hat), Some(e_h), est)
            }
            None => (
                self.temporal_params(self.temporal.as_ref().unwrap(), prior_cond, ctx)?,
                None,
                None,
                0.0,
            ),
        };
        let tables = params.tables()?;
        let idx: Vec<u32> = (0..tables.len() as u32).collect();
        let syms = coder.decode(&tables, &idx, &coded.main)?;
        let (mu, sigma) = params.host()?;
        let z2_hat = tensor_of(&syms, (1, lc, lh, lw), dev, dtype)?;
        Ok(LatentBundle {
            e_z: z2_hat.zeros_like()?,
            z2_hat,
            h2_hat,
            e_h,
            est_bits_z: gaussian_rate(&syms, &mu, &sigma),
            est_bits_h,
        })
    }
}

impl AfHost for CanfCodec {
    fn af_convs(&mut self) -> Vec<&mut AfConv> {
        let mut v = Vec::new();
        for e in self.enc.iter_mut() {
            v.extend(e.convs());
        }
        for d in self.dec.iter_mut() {
            v.extend(d.convs());
        }
        if let Some(hp) = self.hyper.as_mut() {
            v.extend(hp.enc.iter_mut());
            v.extend(hp.dec.iter_mut());
        }
        if let Some(tp) = self.temporal.as_mut() {
            v.extend(tp.convs.iter_mut());
            v.push(&mut tp.out);
        }
        v
    }
}

/// Integer symbols of an integer-valued tensor, in NCHW order.
pub fn symbols_of(t: &Tensor) -> Result<Vec<i32>> {
    Ok(t.flatten_all()?
        .to_dtype(DType::F64)?
        .to_vec1::<f64>()?
        .into_iter()
        .map(|v| v as i32)
        .collect())
}

fn tensor_of(syms: &[i32], shape: (usize, usize, usize, usize), dev: &candle_core::Device, dtype: DType) -> Result<Tensor> {
    let v: Vec<f32> = syms.iter().map(|&s| s as f32).collect();
    Ok(Tensor::from_vec(v, shape, dev)?.to_dtype(dtype)?)
}
