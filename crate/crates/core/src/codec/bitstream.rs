//! Byte layout of coded sequences (see FORMAT.md). All integers are little
//! endian.

use crate::afmod::RateContext;
use crate::entropy::external::ByteReader;
use crate::entropy::CoderId;
use crate::error::{Error, Result};
use crate::gop::FrameType;

use super::CodingMode;

pub const MAGIC: &[u8; 4] = b"HBVC";
pub const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SubstreamId {
    Motion = 0,
    InterY = 1,
    InterUv = 2,
    IntraY = 3,
    IntraUv = 4,
    /// Hyper-latents of the substream that follows.
    Hyper = 5,
    /// Joint Y+UV inter latents (merged, space-to-depth and 4:4:4 modes).
    InterYuv = 6,
}

impl SubstreamId {
    pub fn from_u8(v: u8) -> Result<Self> {
        Ok(match v {
            0 => SubstreamId::Motion,
            1 => SubstreamId::InterY,
            2 => SubstreamId::InterUv,
            3 => SubstreamId::IntraY,
            4 => SubstreamId::IntraUv,
            5 => SubstreamId::Hyper,
            6 => SubstreamId::InterYuv,
            _ => return Err(Error::Bitstream(format!("unknown substream id {v}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Substream {
    pub id: SubstreamId,
    pub bytes: Vec<u8>,
}

impl Substream {
    pub fn new(id: SubstreamId, bytes: Vec<u8>) -> Self {
        Substream { id, bytes }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameBitstream {
    pub display_index: usize,
    pub frame_type: FrameType,
    pub ctx: RateContext,
    pub substreams: Vec<Substream>,
}

/// Fixed bytes per frame record before its substreams.
pub const FRAME_HEADER_BYTES: usize = 4 + 4 + 8 + 1;
pub const SUBSTREAM_HEADER_BYTES: usize = 1 + 4;

impl FrameBitstream {
    pub fn byte_length(&self) -> usize {
        FRAME_HEADER_BYTES
            + self
                .substreams
                .iter()
                .map(|s| SUBSTREAM_HEADER_BYTES + s.bytes.len())
                .sum::<usize>()
    }

    pub fn payload_bits(&self) -> u64 {
        8 * self.substreams.iter().map(|s| s.bytes.len() as u64).sum::<u64>()
    }

    /// Substream ids must match the frame type; hyper-latent substreams
    /// must directly precede their owner.
    pub fn validate(&self) -> Result<()> {
        let owners: Vec<SubstreamId> = self
            .substreams
            .iter()
            .map(|s| s.id)
            .filter(|&id| id != SubstreamId::Hyper)
            .collect();
        let ok = match self.frame_type {
            FrameType::I => owners == [SubstreamId::IntraY, SubstreamId::IntraUv],
            FrameType::B => {
                owners == [SubstreamId::Motion, SubstreamId::InterY, SubstreamId::InterUv]
                    || owners == [SubstreamId::Motion, SubstreamId::InterYuv]
            }
        };
        if !ok {
            return Err(Error::Bitstream(format!(
                "{:?} frame {} carries substreams {owners:?}",
                self.frame_type, self.display_index
            )));
        }
        for (i, s) in self.substreams.iter().enumerate() {
            if s.id == SubstreamId::Hyper
                && self.substreams.get(i + 1).is_none_or(|n| n.id == SubstreamId::Hyper)
            {
                return Err(Error::Bitstream(format!(
                    "frame {}: hyper-latent substream without owner",
                    self.display_index
                )));
            }
        }
        Ok(())
    }

    fn write(&self, out: &mut Vec<u8>) -> Result<()> {
        out.extend((self.display_index as u32).to_le_bytes());
        out.push(match self.frame_type {
            FrameType::I => 0,
            FrameType::B => 1,
        });
        out.push(u8::try_from(self.ctx.lambda_index).map_err(|_| Error::Config("lambda index exceeds 255".into()))?);
        out.push(self.ctx.c);
        out.push(0);
        out.extend(self.ctx.lambda_value.unwrap_or(0.0).to_le_bytes());
        out.push(u8::try_from(self.substreams.len()).map_err(|_| Error::Config("too many substreams".into()))?);
        for s in &self.substreams {
            out.push(s.id as u8);
            out.extend(
                u32::try_from(s.bytes.len())
                    .map_err(|_| Error::Config("substream exceeds 4 GiB".into()))?
                    .to_le_bytes(),
            );
            out.extend(&s.bytes);
        }
        Ok(())
    }

    fn read(r: &mut ByteReader) -> Result<Self> {
        let display_index = r.u32()? as usize;
        let frame_type = match r.u8()? {
            0 => FrameType::I,
            1 => FrameType::B,
            t => return Err(Error::Bitstream(format!("unknown frame type {t}"))),
        };
        let lambda_index = r.u8()? as usize;
        let c = r.u8()?;
        let _reserved = r.u8()?;
        let lv = r.f64()?;
        let ctx = match frame_type {
            FrameType::I => RateContext::intra(lambda_index, lv),
            FrameType::B => RateContext::inter(lambda_index, c),
        };
        let n = r.u8()? as usize;
        let mut substreams = Vec::with_capacity(n);
        for _ in 0..n {
            let id = SubstreamId::from_u8(r.u8()?)?;
            let len = r.u32()? as usize;
            substreams.push(Substream::new(id, r.take(len)?.to_vec()));
        }
        let f = FrameBitstream {
            display_index,
            frame_type,
            ctx,
            substreams,
        };
        f.validate()?;
        Ok(f)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBitstream {
    pub coding_mode: CodingMode,
    pub coder_id: CoderId,
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub intra_period: usize,
    pub lambda_table: Vec<f64>,
    pub checkpoint_hash: [u8; 32],
    /// Frames in coding order.
    pub frames: Vec<FrameBitstream>,
}

impl SequenceBitstream {
    pub fn header_bytes(&self) -> usize {
        8 + 16 + 1 + 8 * self.lambda_table.len() + 32 + 8
    }

    pub fn total_bytes(&self) -> usize {
        self.header_bytes() + self.frames.iter().map(|f| f.byte_length()).sum::<usize>()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let total = self.total_bytes();
        let mut out = Vec::with_capacity(total);
        out.extend(MAGIC);
        out.extend([VERSION, self.coding_mode.to_u8(), self.coder_id as u8, 0]);
        for v in [self.width, self.height, self.frame_count, self.intra_period] {
            out.extend(
                u32::try_from(v)
                    .map_err(|_| Error::Config(format!("{v} does not fit the header")))?
                    .to_le_bytes(),
            );
        }
        out.push(u8::try_from(self.lambda_table.len()).map_err(|_| Error::Config("lambda table too long".into()))?);
        for l in &self.lambda_table {
            out.extend(l.to_le_bytes());
        }
        out.extend(self.checkpoint_hash);
        out.extend((total as u64).to_le_bytes());
        for f in &self.frames {
            f.validate()?;
            f.write(&mut out)?;
        }
        debug_assert_eq!(out.len(), total);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "sequence bitstream");
        if r.take(4)? != MAGIC {
            return Err(Error::Bitstream("not a coded sequence (bad magic)".into()));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::Bitstream(format!("unsupported bitstream version {version}")));
        }
        let coding_mode = CodingMode::from_u8(r.u8()?)?;
        let coder_id = CoderId::from_u8(r.u8()?)?;
        let _reserved = r.u8()?;
        let width = r.u32()? as usize;
        let height = r.u32()? as usize;
        let frame_count = r.u32()? as usize;
        let intra_period = r.u32()? as usize;
        let n = r.u8()? as usize;
        let lambda_table = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let checkpoint_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
        let total = r.u64()?;
        if total != bytes.len() as u64 {
            return Err(Error::Truncated(format!(
                "header announces {total} bytes, stream has {}",
                bytes.len()
            )));
        }
        let mut frames = Vec::with_capacity(frame_count);
        for i in 0..frame_count {
            frames.push(FrameBitstream::read(&mut r).map_err(|e| e.in_frame(i))?);
        }
        if r.remaining() != 0 {
            return Err(Error::Bitstream(format!("{} trailing bytes", r.remaining())));
        }
        Ok(SequenceBitstream {
            coding_mode,
            coder_id,
            width,
            height,
            frame_count,
            intra_period,
            lambda_table,
            checkpoint_hash,
            frames,
        })
    }

    /// Byte offset of every frame record, in coding order.
    pub fn frame_offsets(&self) -> Vec<usize> {
        let mut pos = self.header_bytes();
        self.frames
            .iter()
            .map(|f| {
                let p = pos;
                pos += f.byte_length();
                p
            })
            .collect()
    }
}
