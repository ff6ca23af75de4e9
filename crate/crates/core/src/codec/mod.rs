//! The B-frame coding system: conditional motion codec, Y and UV inter
//! codecs, the intra codec pair, and the sequence-level container.

pub mod bitstream;
pub mod checkpoint;
pub mod sequence;

use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::afmod::{attach_everywhere, AfContext, AfFlags, AfSpec, RateContext, RateInput, LAMBDA_TABLE};
use crate::entropy::SymbolCoder;
use crate::error::{Error, Result};
use crate::flow::{CanfCodec, CanfConfig, CanfInput, CodedLatents, PartSpec, Phase, PriorSpec};
use crate::motion::{downscale_flow_tensor, yuv444_tensor, Compensation, MeNet, MpNet};
use crate::nn::{downsample2, planes_to_tensor, tensor_to_planes, ParamStore};
use crate::yuv::Frame420;

pub use bitstream::{FrameBitstream, SequenceBitstream, Substream, SubstreamId};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use sequence::{decode_sequence, encode_sequence, EncodeOptions, EncodeResult};

/// How the Y and UV components of inter frames are coded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodingMode {
    /// Separate Y and UV codecs, UV conditioned on the decoded Y.
    Conditional,
    /// Separate Y and UV codecs without cross-component conditioning.
    Independent,
    /// One codec whose Y and UV branches meet in the latent domain.
    Merged,
    /// Y rearranged to chroma resolution and coded jointly with UV.
    SpaceToDepth,
    /// Chroma upsampled to luma resolution and coded jointly with Y.
    Yuv444,
}

impl CodingMode {
    pub const ALL: [CodingMode; 5] = [
        CodingMode::Conditional,
        CodingMode::Independent,
        CodingMode::Merged,
        CodingMode::SpaceToDepth,
        CodingMode::Yuv444,
    ];

    pub fn to_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        Self::ALL
            .get(v as usize)
            .copied()
            .ok_or_else(|| Error::Bitstream(format!("unknown coding mode {v}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            CodingMode::Conditional => "conditional",
            CodingMode::Independent => "independent",
            CodingMode::Merged => "merged",
            CodingMode::SpaceToDepth => "space_to_depth",
            CodingMode::Yuv444 => "yuv444",
        }
    }

    /// Whether Y and UV are coded by one codec.
    pub fn is_joint(self) -> bool {
        matches!(self, CodingMode::Merged | CodingMode::SpaceToDepth | CodingMode::Yuv444)
    }
}

impl fmt::Display for CodingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CodingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s.replace('-', "_"))
            .ok_or_else(|| Error::Config(format!("unknown coding mode '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    pub coding_mode: CodingMode,
    pub af: AfFlags,
    /// Feature width of every CANF transform.
    pub width: usize,
    pub latent_channels: usize,
    /// Stride-2 stages between a codec's input and its latent.
    pub levels: usize,
    pub hyper_channels: usize,
    pub hyper_range: i32,
    pub scale_floor: f64,
    /// Inter rate points, highest rate first.
    pub lambda_table: Vec<f64>,
    /// Continuous range of the intra rate parameter.
    pub intra_lambda_range: (f64, f64),
    /// Default intra lambda paired with each inter table entry.
    pub intra_combos: Vec<f64>,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            coding_mode: CodingMode::Conditional,
            af: AfFlags::default(),
            width: 32,
            latent_channels: 16,
            levels: 2,
            hyper_channels: 8,
            hyper_range: 24,
            scale_floor: 0.11,
            lambda_table: LAMBDA_TABLE.to_vec(),
            intra_lambda_range: (64.0, 32768.0),
            intra_combos: LAMBDA_TABLE.iter().map(|l| l * 2.0).collect(),
        }
    }
}

impl CodecConfig {
    /// Reduced widths for single-core training.
    pub fn toy() -> Self {
        CodecConfig {
            width: 16,
            latent_channels: 8,
            hyper_channels: 4,
            ..CodecConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_table.is_empty() || self.lambda_table.len() != self.intra_combos.len() {
            return Err(Error::Config("lambda table and intra combinations must be non-empty and aligned".into()));
        }
        if self.lambda_table.len() > 255 {
            return Err(Error::Config("at most 255 lambda points".into()));
        }
        let (lo, hi) = self.intra_lambda_range;
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::Config(format!("bad intra lambda range [{lo}, {hi}]")));
        }
        if self.width == 0 || self.latent_channels == 0 || self.levels == 0 {
            return Err(Error::Config("codec widths and levels must be positive".into()));
        }
        Ok(())
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_table.iter().cloned().fold(0.0, f64::max)
    }

    /// Clamps an intra lambda into the trained range.
    pub fn clamp_intra_lambda(&self, value: f64) -> f64 {
        let (lo, hi) = self.intra_lambda_range;
        if value < lo || value > hi {
            log::warn!("intra lambda {value} outside trained range [{lo}, {hi}], clamping");
        }
        value.clamp(lo, hi)
    }

    fn canf(&self, parts: Vec<PartSpec>, prior: PriorSpec) -> CanfConfig {
        CanfConfig {
            parts,
            width: self.width,
            latent_channels: self.latent_channels,
            levels: self.levels,
            prior,
            scale_floor: self.scale_floor,
        }
    }

    fn hyper(&self) -> PriorSpec {
        PriorSpec::Hyper {
            channels: self.hyper_channels,
            range: self.hyper_range,
        }
    }

    /// Frame sides are padded to multiples of this: the chroma-resolution
    /// hyperprior codecs need `2^(levels + 1)` at chroma resolution.
    pub fn alignment(&self) -> usize {
        1 << (self.levels + 2)
    }
}

fn part(channels: usize, cond_channels: usize, double_res: bool) -> PartSpec {
    PartSpec {
        channels,
        cond_channels,
        double_res,
    }
}

/// A frame as tensors: luma (N, 1, H, W) and chroma (N, 2, H/2, W/2).
#[derive(Clone, Debug)]
pub struct FrameTensors {
    pub y: Tensor,
    pub uv: Tensor,
}

impl FrameTensors {
    pub fn from_frames(frames: &[&Frame420], device: &Device, dtype: DType) -> Result<Self> {
        let mut ys = Vec::with_capacity(frames.len());
        let mut uvs = Vec::with_capacity(frames.len());
        for f in frames {
            ys.push(planes_to_tensor(&[&f.y], device)?);
            uvs.push(planes_to_tensor(&[&f.u, &f.v], device)?);
        }
        Ok(FrameTensors {
            y: Tensor::cat(&ys, 0)?.to_dtype(dtype)?,
            uv: Tensor::cat(&uvs, 0)?.to_dtype(dtype)?,
        })
    }

    pub fn to_frame(&self, n: usize) -> Result<Frame420> {
        let y = tensor_to_planes(&self.y, n)?.remove(0);
        let mut uv = tensor_to_planes(&self.uv, n)?;
        let v = uv.pop().unwrap();
        let u = uv.pop().unwrap();
        Frame420::new(y, u, v)
    }

    pub fn detach(&self) -> Self {
        FrameTensors {
            y: self.y.detach(),
            uv: self.uv.detach(),
        }
    }

    pub fn yuv444(&self) -> Result<Tensor> {
        yuv444_tensor(&self.y, &self.uv)
    }

    pub fn batch(&self) -> Result<usize> {
        Ok(self.y.dim(0)?)
    }
}

fn clamp01(t: &Tensor) -> Result<Tensor> {
    Ok(t.clamp(0.0, 1.0)?)
}

/// (N, 1, H, W) -> (N, 4, H/2, W/2), channels ordered as in
/// [`crate::yuv::space_to_depth`].
pub fn space_to_depth_tensor(t: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = t.dims4()?;
    if c != 1 || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dimension(format!("space-to-depth needs one even-sized channel, got {:?}", t.dims())));
    }
    Ok(t.reshape((n, h / 2, 2, w / 2, 2))?
        .permute((0, 2, 4, 1, 3))?
        .reshape((n, 4, h / 2, w / 2))?)
}

pub fn depth_to_space_tensor(t: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = t.dims4()?;
    if c != 4 {
        return Err(Error::Dimension(format!("depth-to-space needs 4 channels, got {c}")));
    }
    Ok(t.reshape((n, 2, 2, h, w))?
        .permute((0, 3, 1, 4, 2))?
        .reshape((n, 1, 2 * h, 2 * w))?)
}

#[derive(Clone, Debug)]
enum InterCodecs {
    Separate { y: CanfCodec, uv: CanfCodec },
    Joint(CanfCodec),
}

/// Output of an entropy-coded component: substreams, reconstruction and the
/// entropy model's bit estimate.
pub struct Coded {
    pub substreams: Vec<Substream>,
    pub recon: Vec<Tensor>,
    pub est_bits: f64,
}

/// Reads substreams in order, checking their ids.
pub struct SubstreamCursor<'a> {
    subs: &'a [Substream],
    pos: usize,
}

impl<'a> SubstreamCursor<'a> {
    pub fn new(subs: &'a [Substream]) -> Self {
        SubstreamCursor { subs, pos: 0 }
    }

    fn expect(&mut self, id: SubstreamId) -> Result<&'a [u8]> {
        let s = self
            .subs
            .get(self.pos)
            .ok_or_else(|| Error::Bitstream(format!("missing {id:?} substream")))?;
        if s.id != id {
            return Err(Error::Bitstream(format!("expected {id:?} substream, found {:?}", s.id)));
        }
        self.pos += 1;
        Ok(&s.bytes)
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.subs.len() {
            return Err(Error::Bitstream(format!("{} unexpected trailing substreams", self.subs.len() - self.pos)));
        }
        Ok(())
    }
}

/// Everything a B frame produces on the encoder side.
pub struct BFrameOutput {
    pub substreams: Vec<Substream>,
    pub recon: FrameTensors,
    pub est_bits: f64,
    /// Estimated flows (N, 4, H, W), before coding.
    pub flows: Tensor,
    pub predicted: Tensor,
    pub decoded_flows: Tensor,
}

/// All networks of the codec, sharing one parameter store.
pub struct Model {
    pub config: CodecConfig,
    pub store: ParamStore,
    pub menet: MeNet,
    pub mpnet: MpNet,
    pub mc: Compensation,
    pub motion: CanfCodec,
    inter: InterCodecs,
    pub intra_y: CanfCodec,
    pub intra_uv: CanfCodec,
}

impl Model {
    pub fn new(config: CodecConfig, seed: u64) -> Result<Self> {
        Self::with_dtype(config, seed, DType::F32)
    }

    pub fn with_dtype(config: CodecConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let store = ParamStore::new(seed, dtype);
        let c = &config;
        let menet = MeNet::new(&store)?;
        let mpnet = MpNet::new(&store)?;
        let mc = Compensation::new(&store)?;
        let mut motion = CanfCodec::new(&store, "motion", c.canf(vec![part(4, 4, false)], c.hyper()))?;
        let mut inter = match c.coding_mode {
            CodingMode::Conditional | CodingMode::Independent => {
                let uv_cond = if c.coding_mode == CodingMode::Conditional { 3 } else { 2 };
                InterCodecs::Separate {
                    y: CanfCodec::new(&store, "inter_y", c.canf(vec![part(1, 1, false)], c.hyper()))?,
                    uv: CanfCodec::new(
                        &store,
                        "inter_uv",
                        c.canf(vec![part(2, uv_cond, false)], PriorSpec::Temporal { cond_channels: uv_cond }),
                    )?,
                }
            }
            CodingMode::Merged => InterCodecs::Joint(CanfCodec::new(
                &store,
                "inter_yuv",
                c.canf(vec![part(1, 1, true), part(2, 2, false)], c.hyper()),
            )?),
            CodingMode::SpaceToDepth => {
                InterCodecs::Joint(CanfCodec::new(&store, "inter_yuv", c.canf(vec![part(6, 6, false)], c.hyper()))?)
            }
            CodingMode::Yuv444 => {
                InterCodecs::Joint(CanfCodec::new(&store, "inter_yuv", c.canf(vec![part(3, 3, false)], c.hyper()))?)
            }
        };
        let mut intra_y = CanfCodec::new(&store, "intra_y", c.canf(vec![part(1, 0, false)], c.hyper()))?;
        let mut intra_uv = CanfCodec::new(&store, "intra_uv", c.canf(vec![part(2, 1, false)], c.hyper()))?;

        let inter_spec = AfSpec {
            flags: c.af,
            rate: RateInput::Indexed {
                table_len: c.lambda_table.len(),
            },
            uses_level: true,
            lambda_max: c.lambda_max(),
        };
        let intra_spec = AfSpec {
            flags: c.af,
            rate: RateInput::Continuous,
            uses_level: false,
            lambda_max: c.intra_lambda_range.1,
        };
        attach_everywhere(&mut motion, &store, inter_spec)?;
        match &mut inter {
            InterCodecs::Separate { y, uv } => {
                attach_everywhere(y, &store, inter_spec)?;
                attach_everywhere(uv, &store, inter_spec)?;
            }
            InterCodecs::Joint(j) => {
                attach_everywhere(j, &store, inter_spec)?;
            }
        }
        attach_everywhere(&mut intra_y, &store, intra_spec)?;
        attach_everywhere(&mut intra_uv, &store, intra_spec)?;
        Ok(Model {
            config,
            store,
            menet,
            mpnet,
            mc,
            motion,
            inter,
            intra_y,
            intra_uv,
        })
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn coding_mode(&self) -> CodingMode {
        self.config.coding_mode
    }

    /// The inter codecs as (Y, UV) for separate modes.
    pub fn separate_codecs(&self) -> Option<(&CanfCodec, &CanfCodec)> {
        match &self.inter {
            InterCodecs::Separate { y, uv } => Some((y, uv)),
            InterCodecs::Joint(_) => None,
        }
    }

    pub fn joint_codec(&self) -> Option<&CanfCodec> {
        match &self.inter {
            InterCodecs::Joint(j) => Some(j),
            InterCodecs::Separate { .. } => None,
        }
    }

    /// Codecs that carry rate modulation, with their names.
    pub fn codecs_mut(&mut self) -> Vec<&mut CanfCodec> {
        let mut v = vec![&mut self.motion];
        match &mut self.inter {
            InterCodecs::Separate { y, uv } => {
                v.push(y);
                v.push(uv);
            }
            InterCodecs::Joint(j) => v.push(j),
        }
        v.push(&mut self.intra_y);
        v.push(&mut self.intra_uv);
        v
    }

    pub fn inter_context(&self, contexts: &[RateContext]) -> Result<AfContext> {
        let lambdas = contexts
            .iter()
            .map(|c| {
                self.config
                    .lambda_table
                    .get(c.lambda_index)
                    .copied()
                    .ok_or_else(|| Error::Config(format!("lambda index {} outside table", c.lambda_index)))
            })
            .collect::<Result<Vec<_>>>()?;
        AfContext::new(contexts, &lambdas, self.config.lambda_table.len(), self.config.lambda_max(), self.device(), self.dtype())
    }

    /// Intra contexts carry the continuous lambda; it is clamped to the
    /// trained range.
    pub fn intra_context(&self, contexts: &[RateContext]) -> Result<AfContext> {
        let lambdas = contexts
            .iter()
            .map(|c| {
                let v = c
                    .lambda_value
                    .ok_or_else(|| Error::Config("intra coding needs a lambda value".into()))?;
                Ok(self.config.clamp_intra_lambda(v))
            })
            .collect::<Result<Vec<_>>>()?;
        AfContext::new(
            contexts,
            &lambdas,
            self.config.lambda_table.len(),
            self.config.intra_lambda_range.1,
            self.device(),
            self.dtype(),
        )
    }

    /// Estimated flow from `cur` to `reference`, both (N, 3, H, W) 4:4:4;
    /// the estimator is frozen, so the result carries no gradient.
    pub fn estimate(&self, cur: &Tensor, reference: &Tensor) -> Result<Tensor> {
        Ok(self.menet.forward(&cur.detach(), &reference.detach())?.detach())
    }

    /// Both estimated flows of the frame `x`: (N, 4, H, W).
    pub fn estimate_pair(&self, x: &FrameTensors, past: &FrameTensors, future: &FrameTensors) -> Result<Tensor> {
        let x4 = x.yuv444()?;
        Ok(Tensor::cat(
            &[
                &self.estimate(&x4, &past.yuv444()?)?,
                &self.estimate(&x4, &future.yuv444()?)?,
            ],
            1,
        )?)
    }

    /// Predicted flow pair from the two references only.
    pub fn predict(&self, past: &FrameTensors, future: &FrameTensors) -> Result<Tensor> {
        self.mpnet
            .forward(&self.menet, &past.yuv444()?.detach(), &future.yuv444()?.detach())
    }

    /// Motion-compensated frame from decoded luma-resolution flows.
    pub fn compensate(&self, past: &FrameTensors, future: &FrameTensors, flows: &Tensor) -> Result<FrameTensors> {
        let y = self.mc.y.forward(&past.y, &future.y, flows)?;
        let uv = self.mc.uv.forward(&past.uv, &future.uv, &downscale_flow_tensor(flows)?)?;
        Ok(FrameTensors { y, uv })
    }

    fn code(codec: &CanfCodec, id: SubstreamId, input: CanfInput, anchor: &[Tensor], ctx: &AfContext, coder: &dyn SymbolCoder) -> Result<Coded> {
        let enc = codec.encode(input, ctx)?;
        let CodedLatents { hyper, main } = codec.write(&enc, coder)?;
        let recon = codec.decode(&enc.bundle, anchor, input.cond, ctx)?;
        let mut substreams = Vec::with_capacity(2);
        if let Some(h) = hyper {
            substreams.push(Substream::new(SubstreamId::Hyper, h));
        }
        substreams.push(Substream::new(id, main));
        Ok(Coded {
            substreams,
            recon,
            est_bits: enc.bundle.est_bits(),
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn uncode(
        codec: &CanfCodec,
        id: SubstreamId,
        cursor: &mut SubstreamCursor,
        anchor: &[Tensor],
        cond: &[Option<Tensor>],
        prior_cond: Option<&Tensor>,
        ctx: &AfContext,
        coder: &dyn SymbolCoder,
    ) -> Result<Vec<Tensor>> {
        let hyper = if codec.has_hyperprior() {
            Some(cursor.expect(SubstreamId::Hyper)?.to_vec())
        } else {
            None
        };
        let main = cursor.expect(id)?.to_vec();
        let bundle = codec.read(&CodedLatents { hyper, main }, anchor, prior_cond, ctx, coder)?;
        codec.decode(&bundle, anchor, cond, ctx)
    }

    /// Codes the 4-channel flow stack conditioned on the predicted pair.
    pub fn encode_motion(&self, flows: &Tensor, predicted: &Tensor, ctx: &AfContext, coder: &dyn SymbolCoder) -> Result<Coded> {
        let cond = [Some(predicted.clone())];
        let input = CanfInput {
            x: std::slice::from_ref(flows),
            cond: &cond,
            prior_cond: None,
        };
        Self::code(&self.motion, SubstreamId::Motion, input, std::slice::from_ref(predicted), ctx, coder)
    }

    fn decode_motion(&self, cursor: &mut SubstreamCursor, predicted: &Tensor, ctx: &AfContext, coder: &dyn SymbolCoder) -> Result<Tensor> {
        let cond = [Some(predicted.clone())];
        Ok(Self::uncode(&self.motion, SubstreamId::Motion, cursor, std::slice::from_ref(predicted), &cond, None, ctx, coder)?.remove(0))
    }

    fn separate(&self) -> Result<(&CanfCodec, &CanfCodec)> {
        self.separate_codecs().ok_or_else(|| {
            Error::Config(format!("coding mode {} has no separate Y/UV codecs", self.coding_mode()))
        })
    }

    fn uv_condition(&self, x_c_uv: &Tensor, x_a: Option<&Tensor>) -> Result<Tensor> {
        match self.coding_mode() {
            CodingMode::Conditional => {
                let x_a = x_a.ok_or_else(|| {
                    Error::Ordering("UV coding needs the decoded Y of the same frame first".into())
                })?;
                Ok(Tensor::cat(&[x_c_uv, &downsample2(x_a)?], 1)?)
            }
            _ => Ok(x_c_uv.clone()),
        }
    }

    pub fn encode_inter_y(&self, x_y: &Tensor, x_c_y: &Tensor, ctx: &AfContext, coder: &dyn SymbolCoder) -> Result<Coded> {
        let (y, _) = self.separate()?;
        let cond = [Some(x_c_y.clone())];
        let input = CanfInput {
            x: std::slice::from_ref(x_y),
            cond: &cond,
            prior_cond: None,
        };
        let mut c = Self::code(y, SubstreamId::InterY, input, std::slice::from_ref(x_c_y), ctx, coder)?;
        c.recon[0] = clamp01(&c.recon[0])?;
        Ok(c)
    }

    /// `x_a` is the decoded Y of the same frame; conditional mode refuses
    /// to run without it.
    pub fn encode_inter_uv(&self, x_uv: &Tensor, x_c_uv: &Tensor, x_a: Option<&Tensor>, ctx: &AfContext, coder: &dyn SymbolCoder) -> Result<Coded> {
        let (_, uv) = self.separate()?;
        let c = self.uv_condition(x_c_uv, x_a)?;
        let cond = [Some(c.clone())];
        let input = CanfInput {
            x: std::slice::from_ref(x_uv),
            cond: &cond,
            prior_cond: Some(&c),
        };
        let mut out = Self::code(uv, SubstreamId::InterUv, input, std::slice::from_ref(x_c_uv), ctx, coder)?;
        out.recon[0] = clamp01(&out.recon[0])?;
        Ok(out)
    }

    /// Parts, conditions and anchors of the joint codec.
    fn joint_io(&self, x: &FrameTensors, x_c: &FrameTensors) -> Result<(Vec<Tensor>, Vec<Option<Tensor>>, Vec<Tensor>)> {
        Ok(match self.coding_mode() {
            CodingMode::Merged => (
                vec![x.y.clone(), x.uv.clone()],
                vec![Some(x_c.y.clone()), Some(x_c.uv.clone())],
                vec![x_c.y.clone(), x_c.uv.clone()],
            ),
            CodingMode::SpaceToDepth => {
                let xs = Tensor::cat(&[&space_to_depth_tensor(&x.y)?, &x.uv], 1)?;
                let cs = Tensor::cat(&[&space_to_depth_tensor(&x_c.y)?, &x_c.uv], 1)?;
                (vec![xs], vec![Some(cs.clone())], vec![cs])
            }
            CodingMode::Yuv444 => {
                let cs = x_c.yuv444()?;
                (vec![x.yuv444()?], vec![Some(cs.clone())], vec![cs])
            }
            m => return Err(Error::Config(format!("coding mode {m} has no joint codec"))),
        })
    }

    fn joint_output(&self, recon: &[Tensor]) -> Result<FrameTensors> {
        let (y, uv) = match self.coding_mode() {
            CodingMode::Merged => (recon[0].clone(), recon[1].clone()),
            CodingMode::SpaceToDepth => (
                depth_to_space_tensor(&recon[0].narrow(1, 0, 4)?)?,
                recon[0].narrow(1, 4, 2)?,
            ),
            _ => (recon[0].narrow(1, 0, 1)?, downsample2(&recon[0].narrow(1, 1, 2)?)?),
        };
        Ok(FrameTensors {
            y: clamp01(&y)?,
            uv: clamp01(&uv)?,
        })
    }

    /// Joint Y+UV coding for the merged, space-to-depth and 4:4:4 modes.
    pub fn encode_inter_joint(&self, x: &FrameTensors, x_c: &FrameTensors, ctx: &AfContext, coder: &dyn SymbolCoder) -> Result<(Coded, FrameTensors)> {
        let codec = self
            .joint_codec()
            .ok_or_else(|| Error::Config(format!("coding mode {} has no joint codec", self.coding_mode())))?;
        let (xs, cond, anchor) = self.joint_io(x, x_c)?;
        let input = CanfInput {
            x: &xs,
            cond: &cond,
            prior_cond: None,
        };
        let c = Self::code(codec, SubstreamId::InterYuv, input, &anchor, ctx, coder)?;
        let out = self.joint_output(&c.recon)?;
        Ok((c, out))
    }

    /// Codes a B frame given its decoded references.
    pub fn encode_b(&self, x: &FrameTensors, past: &FrameTensors, future: &FrameTensors, ctx: &AfContext, coder: &dyn SymbolCoder) -> Result<BFrameOutput> {
        let flows = self.estimate_pair(x, past, future)?;
        let predicted = self.predict(past, future)?;
        let motion = self.encode_motion(&flows, &predicted, ctx, coder)?;
        let decoded_flows = motion.recon[0].clone();
        let x_c = self.compensate(past, future, &decoded_flows)?;
        let mut substreams = motion.substreams;
        let mut est_bits = motion.est_bits;
        let recon = if self.coding_mode().is_joint() {
            let (c, out) = self.encode_inter_joint(x, &x_c, ctx, coder)?;
            substreams.extend(c.substreams);
            est_bits += c.est_bits;
            out
        } else {
            let cy = self.encode_inter_y(&x.y, &x_c.y, ctx, coder)?;
            let y_hat = cy.recon[0].clone();
            let cuv = self.encode_inter_uv(&x.uv, &x_c.uv, Some(&y_hat), ctx, coder)?;
            substreams.extend(cy.substreams);
            substreams.extend(cuv.substreams);
            est_bits += cy.est_bits + cuv.est_bits;
            FrameTensors {
                y: y_hat,
                uv: cuv.recon[0].clone(),
            }
        };
        Ok(BFrameOutput {
            substreams,
            recon,
            est_bits,
            flows,
            predicted,
            decoded_flows,
        })
    }

    pub fn decode_b(&self, substreams: &[Substream], past: &FrameTensors, future: &FrameTensors, ctx: &AfContext, coder: &dyn SymbolCoder) -> Result<FrameTensors> {
        let mut cur = SubstreamCursor::new(substreams);
        let predicted = self.predict(past, future)?;
        let flows = self.decode_motion(&mut cur, &predicted, ctx, coder)?;
        let x_c = self.compensate(past, future, &flows)?;
        let out = match &self.inter {
            InterCodecs::Joint(codec) => {
                let (_, cond, anchor) = self.joint_io(&x_c, &x_c)?;
                let rec = Self::uncode(codec, SubstreamId::InterYuv, &mut cur, &anchor, &cond, None, ctx, coder)?;
                self.joint_output(&rec)?
            }
            InterCodecs::Separate { y, uv } => {
                let cond = [Some(x_c.y.clone())];
                let y_hat = clamp01(
                    &Self::uncode(y, SubstreamId::InterY, &mut cur, std::slice::from_ref(&x_c.y), &cond, None, ctx, coder)?[0],
                )?;
                let c = self.uv_condition(&x_c.uv, Some(&y_hat))?;
                let cond = [Some(c.clone())];
                let uv_hat = clamp01(
                    &Self::uncode(uv, SubstreamId::InterUv, &mut cur, std::slice::from_ref(&x_c.uv), &cond, Some(&c), ctx, coder)?[0],
                )?;
                FrameTensors { y: y_hat, uv: uv_hat }
            }
        };
        cur.finish()?;
        Ok(out)
    }

    fn intra_io(&self, y_hat: &Tensor) -> Result<(Tensor, [Option<Tensor>; 1])> {
        Ok((y_hat.zeros_like()?, [Some(downsample2(y_hat)?)]))
    }

    /// Intra coding: Y from a zero anchor, then UV conditioned on the
    /// decoded Y.
    pub fn encode_intra(&self, x: &FrameTensors, ctx: &AfContext, coder: &dyn SymbolCoder) -> Result<(Vec<Substream>, FrameTensors, f64)> {
        let zeros_y = x.y.zeros_like()?;
        let none = [None];
        let cy = Self::code(
            &self.intra_y,
            SubstreamId::IntraY,
            CanfInput {
                x: std::slice::from_ref(&x.y),
                cond: &none,
                prior_cond: None,
            },
            std::slice::from_ref(&zeros_y),
            ctx,
            coder,
        )?;
        let y_hat = clamp01(&cy.recon[0])?;
        let (_, cond) = self.intra_io(&y_hat)?;
        let zeros_uv = x.uv.zeros_like()?;
        let cuv = Self::code(
            &self.intra_uv,
            SubstreamId::IntraUv,
            CanfInput {
                x: std::slice::from_ref(&x.uv),
                cond: &cond,
                prior_cond: None,
            },
            std::slice::from_ref(&zeros_uv),
            ctx,
            coder,
        )?;
        let uv_hat = clamp01(&cuv.recon[0])?;
        let mut subs = cy.substreams;
        subs.extend(cuv.substreams);
        Ok((subs, FrameTensors { y: y_hat, uv: uv_hat }, cy.est_bits + cuv.est_bits))
    }

    /// `shape` gives the padded luma (height, width).
    pub fn decode_intra(&self, substreams: &[Substream], shape: (usize, usize), ctx: &AfContext, coder: &dyn SymbolCoder) -> Result<FrameTensors> {
        let (h, w) = shape;
        let mut cur = SubstreamCursor::new(substreams);
        let zeros_y = Tensor::zeros((1, 1, h, w), self.dtype(), self.device())?;
        let y_hat = clamp01(
            &Self::uncode(&self.intra_y, SubstreamId::IntraY, &mut cur, std::slice::from_ref(&zeros_y), &[None], None, ctx, coder)?[0],
        )?;
        let (_, cond) = self.intra_io(&y_hat)?;
        let zeros_uv = Tensor::zeros((1, 2, h / 2, w / 2), self.dtype(), self.device())?;
        let uv_hat = clamp01(
            &Self::uncode(&self.intra_uv, SubstreamId::IntraUv, &mut cur, std::slice::from_ref(&zeros_uv), &cond, None, ctx, coder)?[0],
        )?;
        cur.finish()?;
        Ok(FrameTensors { y: y_hat, uv: uv_hat })
    }

    /// Differentiable intra pass: reconstruction and total estimated bits.
    pub fn train_intra(&self, x: &FrameTensors, ctx: &AfContext, phase: &mut Phase) -> Result<(FrameTensors, Tensor)> {
        let none = [None];
        let ty = self.intra_y.forward_train(
            CanfInput {
                x: std::slice::from_ref(&x.y),
                cond: &none,
                prior_cond: None,
            },
            &[x.y.zeros_like()?],
            ctx,
            phase,
        )?;
        let y_hat = clamp01(&ty.recon[0])?;
        let (_, cond) = self.intra_io(&y_hat)?;
        let tuv = self.intra_uv.forward_train(
            CanfInput {
                x: std::slice::from_ref(&x.uv),
                cond: &cond,
                prior_cond: None,
            },
            &[x.uv.zeros_like()?],
            ctx,
            phase,
        )?;
        Ok((
            FrameTensors {
                y: y_hat,
                uv: clamp01(&tuv.recon[0])?,
            },
            (ty.bits + tuv.bits)?,
        ))
    }

    /// Differentiable B-frame pass with references that may carry gradient.
    pub fn train_b(&self, x: &FrameTensors, past: &FrameTensors, future: &FrameTensors, ctx: &AfContext, phase: &mut Phase) -> Result<(FrameTensors, Tensor)> {
        let flows = self.estimate_pair(x, past, future)?;
        let predicted = self.predict(past, future)?;
        let cond = [Some(predicted.clone())];
        let tm = self.motion.forward_train(
            CanfInput {
                x: std::slice::from_ref(&flows),
                cond: &cond,
                prior_cond: None,
            },
            std::slice::from_ref(&predicted),
            ctx,
            phase,
        )?;
        let x_c = self.compensate(past, future, &tm.recon[0])?;
        let mut bits = tm.bits;
        let recon = match &self.inter {
            InterCodecs::Separate { y, uv } => {
                let cond = [Some(x_c.y.clone())];
                let ty = y.forward_train(
                    CanfInput {
                        x: std::slice::from_ref(&x.y),
                        cond: &cond,
                        prior_cond: None,
                    },
                    std::slice::from_ref(&x_c.y),
                    ctx,
                    phase,
                )?;
                let y_hat = clamp01(&ty.recon[0])?;
                let c = self.uv_condition(&x_c.uv, Some(&y_hat))?;
                let cond = [Some(c.clone())];
                let tuv = uv.forward_train(
                    CanfInput {
                        x: std::slice::from_ref(&x.uv),
                        cond: &cond,
                        prior_cond: Some(&c),
                    },
                    std::slice::from_ref(&x_c.uv),
                    ctx,
                    phase,
                )?;
                bits = ((bits + ty.bits)? + tuv.bits)?;
                FrameTensors {
                    y: y_hat,
                    uv: clamp01(&tuv.recon[0])?,
                }
            }
            InterCodecs::Joint(codec) => {
                let (xs, cond, anchor) = self.joint_io(x, &x_c)?;
                let t = codec.forward_train(
                    CanfInput {
                        x: &xs,
                        cond: &cond,
                        prior_cond: None,
                    },
                    &anchor,
                    ctx,
                    phase,
                )?;
                bits = (bits + t.bits)?;
                self.joint_output(&t.recon)?
            }
        };
        Ok((recon, bits))
    }

    /// Motion-compensated prediction only (no residual coding), for
    /// diagnostics and compensation training.
    pub fn compensate_with_estimated(&self, x: &FrameTensors, past: &FrameTensors, future: &FrameTensors) -> Result<FrameTensors> {
        let flows = self.estimate_pair(x, past, future)?;
        self.compensate(past, future, &flows)
    }
}

#[cfg(test)]
mod tests;
