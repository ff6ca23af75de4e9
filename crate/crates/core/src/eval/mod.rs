//! Rate-distortion evaluation, BD-rate, rate targeting and RD plots.

pub mod bdrate;
pub mod plot;
pub mod target;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{decode_sequence, encode_sequence, Checkpoint, EncodeOptions};
use crate::entropy::SymbolCoder;
use crate::error::{Error, Result};
use crate::yuv::{psnr_yuv, weighted_psnr_yuv, Frame420};

pub use bdrate::{bd_rate, bd_rate_with, BdMethod};
pub use plot::{plot_rd, Curve, PlotSummary};
pub use target::{target_rate, Probe, TargetOptions, TargetResult};

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Where on the rate axis a sequence is coded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub lambda_index: usize,
    /// Defaults to the table combination of `lambda_index`.
    pub intra_lambda: Option<f64>,
    pub intra_period: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    /// Bits per luma pixel and frame, from the stream size in bytes.
    pub bpp: f64,
    pub psnr_yuv: f64,
    pub psnr_y: f64,
    pub psnr_u: f64,
    pub psnr_v: f64,
    pub bytes: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub lambda_index: usize,
    pub lambda: f64,
    pub intra_lambda: f64,
    pub intra_period: usize,
}

/// Stream bytes and decoded frames of one coding run.
pub struct CodedSequence {
    pub bytes: Vec<u8>,
    pub decoded: Vec<Frame420>,
}

/// Anything that turns a sequence into bytes and back at a rate point.
pub trait SequenceCodec {
    fn name(&self) -> String;
    fn lambda_table(&self) -> Vec<f64>;
    /// Intra lambda used when a rate point does not give one.
    fn intra_combo(&self, lambda_index: usize) -> f64;
    fn intra_lambda_range(&self) -> (f64, f64);
    fn code(&self, frames: &[Frame420], point: &RatePoint) -> Result<CodedSequence>;
}

/// The learned codec: encodes, then decodes the stream independently.
pub struct LearnedCodec<'a> {
    pub checkpoint: &'a Checkpoint,
    pub coder: &'a dyn SymbolCoder,
}

impl SequenceCodec for LearnedCodec<'_> {
    fn name(&self) -> String {
        format!("hbc-{}", self.checkpoint.model.coding_mode())
    }

    fn lambda_table(&self) -> Vec<f64> {
        self.checkpoint.model.config.lambda_table.clone()
    }

    fn intra_combo(&self, lambda_index: usize) -> f64 {
        self.checkpoint.model.config.intra_combos[lambda_index]
    }

    fn intra_lambda_range(&self) -> (f64, f64) {
        self.checkpoint.model.config.intra_lambda_range
    }

    fn code(&self, frames: &[Frame420], point: &RatePoint) -> Result<CodedSequence> {
        let opts = EncodeOptions {
            lambda_index: point.lambda_index,
            intra_lambda: point.intra_lambda,
            intra_period: point.intra_period,
            dump_flows: None,
        };
        let enc = encode_sequence(self.checkpoint, frames, &opts, self.coder)?;
        let decoded = decode_sequence(self.checkpoint, &enc.bytes, self.coder)?;
        if let Some(i) = (0..decoded.len()).find(|&i| decoded[i] != enc.reconstructions[i]) {
            return Err(Error::Bitstream(format!("decoder output differs from the encoder at frame {i}")));
        }
        Ok(CodedSequence {
            bytes: enc.bytes,
            decoded,
        })
    }
}

/// Codes `frames` at `point` and measures rate and quality. PSNRs are
/// per-frame values averaged over the sequence.
pub fn evaluate(codec: &dyn SequenceCodec, frames: &[Frame420], point: &RatePoint) -> Result<RdPoint> {
    let first = frames.first().ok_or_else(|| Error::Config("no frames to evaluate".into()))?;
    let table = codec.lambda_table();
    let lambda = *table
        .get(point.lambda_index)
        .ok_or_else(|| Error::Config(format!("lambda index {} outside table", point.lambda_index)))?;
    let coded = codec.code(frames, point)?;
    if coded.decoded.len() != frames.len() {
        return Err(Error::Bitstream(format!("{} frames decoded from {}", coded.decoded.len(), frames.len())));
    }
    let (mut y, mut u, mut v) = (0.0, 0.0, 0.0);
    for (f, d) in frames.iter().zip(&coded.decoded) {
        let p = psnr_yuv(f, d)?;
        y += p.psnr_y;
        u += p.psnr_u;
        v += p.psnr_v;
    }
    let n = frames.len() as f64;
    let (y, u, v) = (y / n, u / n, v / n);
    let (w, h) = (first.width(), first.height());
    let (lo, hi) = codec.intra_lambda_range();
    Ok(RdPoint {
        bpp: coded.bytes.len() as f64 * 8.0 / (w * h * frames.len()) as f64,
        psnr_yuv: weighted_psnr_yuv(y, u, v),
        psnr_y: y,
        psnr_u: u,
        psnr_v: v,
        bytes: coded.bytes.len(),
        frames: frames.len(),
        width: w,
        height: h,
        lambda_index: point.lambda_index,
        lambda,
        intra_lambda: point.intra_lambda.unwrap_or_else(|| codec.intra_combo(point.lambda_index)).clamp(lo, hi),
        intra_period: point.intra_period,
    })
}

/// One RD curve as written by `eval` and read by `bdrate` and `plot`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub schema_version: u32,
    pub codec: String,
    pub sequence: String,
    pub points: Vec<RdPoint>,
}

impl MetricsFile {
    pub fn new(codec: String, sequence: String, points: Vec<RdPoint>) -> Self {
        MetricsFile {
            schema_version: METRICS_SCHEMA_VERSION,
            codec,
            sequence,
            points,
        }
    }

    pub fn rate_psnr(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.bpp, p.psnr_yuv)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m: MetricsFile = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        if m.schema_version != METRICS_SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "{}: schema version {} (expected {METRICS_SCHEMA_VERSION})",
                path.display(),
                m.schema_version
            )));
        }
        Ok(m)
    }
}
