//! Sequence encoding and decoding in hierarchical-B coding order.

use std::path::PathBuf;

use crate::afmod::RateContext;
use crate::entropy::SymbolCoder;
use crate::error::{Error, Result};
use crate::gop::{plan_gop, validate, FrameType, GopPlan};
use crate::motion::FlowPair;
use crate::yuv::Frame420;

use super::{Checkpoint, FrameBitstream, FrameTensors, SequenceBitstream};

#[derive(Clone, Debug)]
pub struct EncodeOptions {
    pub lambda_index: usize,
    /// Intra rate parameter; defaults to the combination paired with
    /// `lambda_index`.
    pub intra_lambda: Option<f64>,
    pub intra_period: usize,
    /// Directory receiving estimated and decoded flows of every B frame.
    pub dump_flows: Option<PathBuf>,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        EncodeOptions {
            lambda_index: 1,
            intra_lambda: None,
            intra_period: 32,
            dump_flows: None,
        }
    }
}

pub struct EncodeResult {
    pub bytes: Vec<u8>,
    pub stream: SequenceBitstream,
    pub plan: GopPlan,
    /// Encoder-side reconstructions in display order.
    pub reconstructions: Vec<Frame420>,
    /// Entropy-model bit estimates per frame, in coding order.
    pub est_bits: Vec<f64>,
}

fn check_frames(frames: &[Frame420]) -> Result<(usize, usize)> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Config("no frames to encode".into()))?;
    let (w, h) = (first.width(), first.height());
    if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| (f.width(), f.height()) != (w, h)) {
        return Err(Error::Dimension(format!(
            "frame {i} is {}x{}, frame 0 is {w}x{h}",
            f.width(),
            f.height()
        )));
    }
    Ok((w, h))
}

fn padded_size(w: usize, h: usize, a: usize) -> (usize, usize) {
    (w.div_ceil(a) * a, h.div_ceil(a) * a)
}

fn plan(num_frames: usize, intra_period: usize) -> Result<GopPlan> {
    let plan = plan_gop(num_frames, intra_period)?;
    if let Some(v) = validate(&plan).first() {
        return Err(Error::Ordering(format!("invalid GOP plan: {v:?}")));
    }
    Ok(plan)
}

fn reference<'a>(recon: &'a [Option<FrameTensors>], idx: Option<usize>, display: usize) -> Result<&'a FrameTensors> {
    idx.and_then(|i| recon.get(i)?.as_ref()).ok_or_else(|| {
        Error::Ordering(format!("frame {display} needs reference {idx:?} before it is reconstructed"))
    })
}

/// Rounds a reconstruction to 8-bit sample values, which is what the
/// decoder outputs and what later frames reference.
fn settle(rec: &FrameTensors, model: &super::Model) -> Result<(Frame420, FrameTensors)> {
    let f = rec.to_frame(0)?.quantize_8bit();
    let t = FrameTensors::from_frames(&[&f], model.device(), model.dtype())?;
    Ok((f, t))
}

pub fn encode_sequence(ck: &Checkpoint, frames: &[Frame420], opts: &EncodeOptions, coder: &dyn SymbolCoder) -> Result<EncodeResult> {
    let model = &ck.model;
    let cfg = &model.config;
    let (w, h) = check_frames(frames)?;
    if opts.lambda_index >= cfg.lambda_table.len() {
        return Err(Error::Config(format!("lambda index {} outside table", opts.lambda_index)));
    }
    let plan = plan(frames.len(), opts.intra_period)?;
    let (pw, ph) = padded_size(w, h, cfg.alignment());
    let intra_lambda = cfg.clamp_intra_lambda(opts.intra_lambda.unwrap_or(cfg.intra_combos[opts.lambda_index]));
    if let Some(dir) = &opts.dump_flows {
        std::fs::create_dir_all(dir)?;
    }

    let mut recon: Vec<Option<FrameTensors>> = vec![None; frames.len()];
    let mut out_frames: Vec<Option<Frame420>> = vec![None; frames.len()];
    let mut coded = Vec::with_capacity(frames.len());
    let mut est_bits = Vec::with_capacity(frames.len());
    for e in &plan.entries {
        let d = e.display_index;
        let step = || -> Result<(FrameBitstream, FrameTensors, f64)> {
            let x = FrameTensors::from_frames(&[&frames[d].pad_to(pw, ph)?], model.device(), model.dtype())?;
            match e.frame_type {
                FrameType::I => {
                    let ctx = RateContext::intra(opts.lambda_index, intra_lambda);
                    let (subs, rec, est) = model.encode_intra(&x, &model.intra_context(&[ctx])?, coder)?;
                    Ok((
                        FrameBitstream {
                            display_index: d,
                            frame_type: FrameType::I,
                            ctx,
                            substreams: subs,
                        },
                        rec,
                        est,
                    ))
                }
                FrameType::B => {
                    let past = reference(&recon, e.ref_past, d)?;
                    let future = reference(&recon, e.ref_future, d)?;
                    let ctx = RateContext::inter(opts.lambda_index, e.coding_level);
                    let b = model.encode_b(&x, past, future, &model.inter_context(&[ctx])?, coder)?;
                    if let Some(dir) = &opts.dump_flows {
                        let mut f = std::fs::File::create(dir.join(format!("flow_{d:05}.f32")))?;
                        for t in [&b.flows, &b.decoded_flows] {
                            let p = FlowPair::from_tensor(t, 0)?;
                            p.backward.write_planar(&mut f)?;
                            p.forward.write_planar(&mut f)?;
                        }
                    }
                    Ok((
                        FrameBitstream {
                            display_index: d,
                            frame_type: FrameType::B,
                            ctx,
                            substreams: b.substreams,
                        },
                        b.recon,
                        b.est_bits,
                    ))
                }
            }
        };
        let (fb, rec, est) = step().map_err(|err| err.in_frame(d))?;
        let (f, t) = settle(&rec, model)?;
        recon[d] = Some(t);
        out_frames[d] = Some(f.crop_to(w, h)?);
        coded.push(fb);
        est_bits.push(est);
    }
    let stream = SequenceBitstream {
        coding_mode: cfg.coding_mode,
        coder_id: coder.id(),
        width: w,
        height: h,
        frame_count: frames.len(),
        intra_period: opts.intra_period,
        lambda_table: cfg.lambda_table.clone(),
        checkpoint_hash: ck.hash,
        frames: coded,
    };
    let bytes = stream.to_bytes()?;
    Ok(EncodeResult {
        bytes,
        stream,
        plan,
        reconstructions: out_frames.into_iter().map(|f| f.unwrap()).collect(),
        est_bits,
    })
}

/// Decodes a stream with the checkpoint it was produced with; any other
/// checkpoint is refused.
pub fn decode_sequence(ck: &Checkpoint, bytes: &[u8], coder: &dyn SymbolCoder) -> Result<Vec<Frame420>> {
    let stream = SequenceBitstream::from_bytes(bytes)?;
    let model = &ck.model;
    if stream.checkpoint_hash != ck.hash {
        return Err(Error::CheckpointMismatch(format!(
            "stream was coded with checkpoint {}, got {}",
            super::checkpoint::hex(&stream.checkpoint_hash),
            ck.hash_hex()
        )));
    }
    if stream.coding_mode != model.coding_mode() {
        return Err(Error::CheckpointMismatch(format!(
            "stream uses coding mode {}, checkpoint {}",
            stream.coding_mode,
            model.coding_mode()
        )));
    }
    if stream.coder_id != coder.id() {
        return Err(Error::Bitstream(format!(
            "stream was coded with the {:?} coder, decoding with {:?}",
            stream.coder_id,
            coder.id()
        )));
    }
    let plan = plan(stream.frame_count, stream.intra_period)?;
    let (w, h) = (stream.width, stream.height);
    if w == 0 || h == 0 || w % 2 != 0 || h % 2 != 0 {
        return Err(Error::Bitstream(format!("invalid frame size {w}x{h}")));
    }
    let (pw, ph) = padded_size(w, h, model.config.alignment());
    let mut recon: Vec<Option<FrameTensors>> = vec![None; stream.frame_count];
    let mut out: Vec<Option<Frame420>> = vec![None; stream.frame_count];
    for (e, fb) in plan.entries.iter().zip(&stream.frames) {
        let d = e.display_index;
        let step = || -> Result<FrameTensors> {
            if fb.display_index != d || fb.frame_type != e.frame_type {
                return Err(Error::Bitstream(format!(
                    "record {:?} frame {} where the GOP plan expects {:?} frame {d}",
                    fb.frame_type, fb.display_index, e.frame_type
                )));
            }
            match e.frame_type {
                FrameType::I => model.decode_intra(&fb.substreams, (ph, pw), &model.intra_context(&[fb.ctx])?, coder),
                FrameType::B => {
                    if fb.ctx.c != e.coding_level {
                        return Err(Error::Bitstream(format!("frame {d} has coding level {}", fb.ctx.c)));
                    }
                    let past = reference(&recon, e.ref_past, d)?;
                    let future = reference(&recon, e.ref_future, d)?;
                    model.decode_b(&fb.substreams, past, future, &model.inter_context(&[fb.ctx])?, coder)
                }
            }
        };
        let rec = step().map_err(|err| err.in_frame(d))?;
        let (f, t) = settle(&rec, model).map_err(|err| err.in_frame(d))?;
        recon[d] = Some(t);
        out[d] = Some(f.crop_to(w, h)?);
    }
    Ok(out.into_iter().map(|f| f.unwrap()).collect())
}
